//! Overlay rendering: pruned patches are darkened, kept patches left untouched.

use crate::error::{EvsError, Result};
use crate::geometry::PatchGeometry;
use crate::mask::RetentionMask;
use crate::tensor::{PixelData, VideoClip, CLIP_CHANNELS};

/// Brightness multiplier applied to pruned patches.
pub const DEFAULT_DARKEN: f32 = 0.25;

fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Renders one channel-planar 8-bit frame per clip frame.
///
/// `f32` clips are interpreted on the 0..=255 scale and clamped.
pub fn render_overlay(
    clip: &VideoClip,
    geometry: &PatchGeometry,
    mask: &RetentionMask,
    darken: f32,
) -> Result<Vec<Vec<u8>>> {
    clip.check_geometry(geometry)?;
    if mask.shape() != geometry.grid(clip.frames()) {
        return Err(EvsError::invalid("mask grid does not match clip geometry"));
    }
    if !(0.0..=1.0).contains(&darken) {
        return Err(EvsError::invalid(format!(
            "darken factor {darken} outside [0, 1]"
        )));
    }
    let (h, w) = (clip.height(), clip.width());
    let p = geometry.effective_patch();
    let gw = geometry.grid_width();
    let per_frame = geometry.tokens_per_frame();
    let frame_len = CLIP_CHANNELS * h * w;
    let frames = (0..clip.frames())
        .map(|t| {
            let mut out = vec![0u8; frame_len];
            for c in 0..CLIP_CHANNELS {
                for y in 0..h {
                    for x in 0..w {
                        let i = (c * h + y) * w + x;
                        let src = clip.offset(t, c, y, x);
                        let kept = mask.is_kept(t * per_frame + (y / p) * gw + x / p);
                        out[i] = match (clip.data(), kept) {
                            (PixelData::U8(v), true) => v[src],
                            (PixelData::U8(v), false) => to_u8(f32::from(v[src]) * darken),
                            (PixelData::F32(v), true) => to_u8(v[src]),
                            (PixelData::F32(v), false) => to_u8(v[src] * darken),
                        };
                    }
                }
            }
            out
        })
        .collect();
    Ok(frames)
}
