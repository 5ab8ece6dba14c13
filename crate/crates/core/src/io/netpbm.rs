//! Binary PPM (P6) / PGM (P5) frames, 8-bit only.

use std::fs;
use std::path::Path;

use crate::error::{EvsError, Result};
use crate::tensor::{PixelData, VideoClip, CLIP_CHANNELS};

/// A decoded frame, channel-planar (`3 x H x W`). Grey frames are replicated to 3 planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub planes: Vec<u8>,
}

fn skip_ws_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_uint(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    *pos = skip_ws_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| EvsError::corrupt("malformed netpbm header"))
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Frame> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => {
            return Err(EvsError::UnsupportedFormat(
                "only binary PPM (P6) and PGM (P5) frames are accepted".into(),
            ))
        }
    };
    let mut pos = 2;
    let width = read_uint(bytes, &mut pos)?;
    let height = read_uint(bytes, &mut pos)?;
    let maxval = read_uint(bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(EvsError::UnsupportedFormat(format!(
            "netpbm maxval {maxval} (8-bit only)"
        )));
    }
    if width == 0 || height == 0 {
        return Err(EvsError::corrupt("netpbm frame has zero size"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let raster = bytes
        .get(pos..)
        .filter(|r| r.len() == n * channels)
        .ok_or_else(|| {
            EvsError::corrupt(format!("netpbm raster must hold {} bytes", n * channels))
        })?;
    let mut planes = vec![0u8; CLIP_CHANNELS * n];
    for i in 0..n {
        for c in 0..CLIP_CHANNELS {
            planes[c * n + i] = if channels == 3 {
                raster[i * 3 + c]
            } else {
                raster[i]
            };
        }
    }
    Ok(Frame {
        width,
        height,
        planes,
    })
}

/// Encodes a channel-planar RGB frame as P6.
pub fn encode_ppm(width: usize, height: usize, planes: &[u8]) -> Vec<u8> {
    let n = width * height;
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(3 * n);
    for i in 0..n {
        for c in 0..CLIP_CHANNELS {
            out.push(planes[c * n + i]);
        }
    }
    out
}

/// Loads every `.ppm`/`.pgm` file in `dir`, sorted by file name, as one clip.
pub fn read_frame_dir(dir: &Path) -> Result<VideoClip> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("ppm") || e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if paths.is_empty() {
        return Err(EvsError::invalid(format!(
            "no PPM/PGM frames in {}",
            dir.display()
        )));
    }
    let mut data = Vec::new();
    let mut size = None;
    for p in &paths {
        let frame = decode_pnm(&fs::read(p)?)?;
        match size {
            None => size = Some((frame.width, frame.height)),
            Some(s) if s != (frame.width, frame.height) => {
                return Err(EvsError::invalid(format!(
                    "{} is {}x{}, earlier frames are {}x{}",
                    p.display(),
                    frame.width,
                    frame.height,
                    s.0,
                    s.1
                )))
            }
            Some(_) => {}
        }
        data.extend_from_slice(&frame.planes);
    }
    let (w, h) = size.expect("at least one frame");
    VideoClip::new(paths.len(), h, w, PixelData::U8(data))
}
