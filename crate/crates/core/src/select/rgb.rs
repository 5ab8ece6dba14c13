use rayon::prelude::*;

use super::{build_mask, DiffField, PruningConfig, Selector};
use crate::error::{EvsError, Result};
use crate::geometry::PatchGeometry;
use crate::mask::RetentionMask;
use crate::scalar::Scalar;
use crate::tensor::{PixelData, VideoClip, CLIP_CHANNELS};

/// Mean absolute pixel difference per patch between consecutive frames.
///
/// The mean runs over every pixel and channel the patch actually covers, so
/// partial edge patches are scored on the same scale as interior ones.
/// Frame pairs are processed in parallel; each patch accumulates its pixels in
/// `(channel, row, column)` order, so results do not depend on the thread count.
pub fn compute_rgb_diffs<S: Scalar>(
    clip: &VideoClip,
    geometry: &PatchGeometry,
) -> Result<DiffField<S>> {
    clip.check_geometry(geometry)?;
    let grid = geometry.grid(clip.frames());
    let frame_len = CLIP_CHANNELS * clip.height() * clip.width();
    let per_frame: Vec<Vec<S>> = (1..clip.frames())
        .into_par_iter()
        .map(|t| {
            let prev = (t - 1) * frame_len..t * frame_len;
            let cur = t * frame_len..(t + 1) * frame_len;
            match clip.data() {
                PixelData::U8(v) => frame_pair(&v[prev], &v[cur], geometry, S::lift_u8),
                PixelData::F32(v) => frame_pair(&v[prev], &v[cur], geometry, S::lift_f32),
            }
        })
        .collect();
    let values = per_frame.into_iter().flatten().collect();
    DiffField::new(grid, values).map_err(|e| EvsError::invalid(format!("rgb diffs: {e}")))
}

fn frame_pair<P: Copy, S: Scalar>(
    prev: &[P],
    cur: &[P],
    geometry: &PatchGeometry,
    promote: impl Fn(P) -> S,
) -> Vec<S> {
    let (w, h) = (geometry.frame_width(), geometry.frame_height());
    let gw = geometry.grid_width();
    let p = geometry.effective_patch();
    let mut acc = vec![S::zero(); geometry.tokens_per_frame()];
    for c in 0..CLIP_CHANNELS {
        for y in 0..h {
            let row = (c * h + y) * w;
            let cell_row = (y / p) * gw;
            for x in 0..w {
                let d = promote(cur[row + x]) - promote(prev[row + x]);
                acc[cell_row + x / p] = acc[cell_row + x / p] + d.abs();
            }
        }
    }
    for gy in 0..geometry.grid_height() {
        for gx in 0..gw {
            let (x0, y0, x1, y1) = geometry.patch_bounds(gy, gx);
            let count = S::from_usize_lossy((x1 - x0) * (y1 - y0) * CLIP_CHANNELS);
            acc[gy * gw + gx] = acc[gy * gw + gx] / count;
        }
    }
    acc
}

/// Pixel-space retention mask: diffs, then [`build_mask`].
pub fn build_mask_rgb<S: Scalar>(
    clip: &VideoClip,
    geometry: &PatchGeometry,
    config: &PruningConfig,
) -> Result<RetentionMask> {
    if config.selector != Selector::Rgb {
        return Err(EvsError::invalid("pixel-space masks need the rgb selector"));
    }
    let diffs = compute_rgb_diffs::<S>(clip, geometry)?;
    build_mask(&diffs, config)
}
