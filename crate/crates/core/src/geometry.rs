//! Patch grid, effective patch size and the canonical token order.
//!
//! Tokens are ordered frame-major, then row-major within a frame. Position IDs,
//! mask bits and token records all follow this order.

use serde::{Deserialize, Serialize};

use crate::error::{EvsError, Result};

/// Pixels covered by one vision token: stem patch size times projector downsampling.
pub fn effective_patch_size(encoder_patch: usize, projector_downsample: usize) -> Result<usize> {
    if encoder_patch == 0 || projector_downsample == 0 {
        return Err(EvsError::invalid(format!(
            "encoder patch ({encoder_patch}) and projector downsample ({projector_downsample}) must be >= 1"
        )));
    }
    encoder_patch
        .checked_mul(projector_downsample)
        .ok_or_else(|| EvsError::invalid("effective patch size overflows"))
}

/// Maps a `frame_width x frame_height` image onto a grid of square token patches.
///
/// Edge cells are partial when the frame size is not a multiple of the effective
/// patch; they still count as ordinary grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    frame_width: usize,
    frame_height: usize,
    encoder_patch: usize,
    projector_downsample: usize,
    effective_patch: usize,
    grid_width: usize,
    grid_height: usize,
}

impl PatchGeometry {
    pub fn new(
        frame_width: usize,
        frame_height: usize,
        encoder_patch: usize,
        projector_downsample: usize,
    ) -> Result<Self> {
        let effective_patch = effective_patch_size(encoder_patch, projector_downsample)?;
        if frame_width == 0 || frame_height == 0 {
            return Err(EvsError::invalid(format!(
                "frame size must be positive, got {frame_width}x{frame_height}"
            )));
        }
        Ok(Self {
            frame_width,
            frame_height,
            encoder_patch,
            projector_downsample,
            effective_patch,
            grid_width: frame_width.div_ceil(effective_patch),
            grid_height: frame_height.div_ceil(effective_patch),
        })
    }

    pub fn frame_width(&self) -> usize {
        self.frame_width
    }

    pub fn frame_height(&self) -> usize {
        self.frame_height
    }

    pub fn encoder_patch(&self) -> usize {
        self.encoder_patch
    }

    pub fn projector_downsample(&self) -> usize {
        self.projector_downsample
    }

    pub fn effective_patch(&self) -> usize {
        self.effective_patch
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.grid_width * self.grid_height
    }

    /// Grid shape for a clip of `frames` frames.
    pub fn grid(&self, frames: usize) -> GridShape {
        GridShape {
            frames,
            height: self.grid_height,
            width: self.grid_width,
        }
    }

    /// Pixel rectangle `(x0, y0, x1, y1)`, half-open, covered by grid cell `(y, x)`.
    pub fn patch_bounds(&self, y: usize, x: usize) -> (usize, usize, usize, usize) {
        let p = self.effective_patch;
        let x0 = x * p;
        let y0 = y * p;
        (
            x0,
            y0,
            (x0 + p).min(self.frame_width),
            (y0 + p).min(self.frame_height),
        )
    }
}

/// Coordinates of one token site in a `T x H' x W'` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSite {
    pub t: usize,
    pub y: usize,
    pub x: usize,
}

impl TokenSite {
    pub const fn new(t: usize, y: usize, x: usize) -> Self {
        Self { t, y, x }
    }
}

/// Logical `T x H' x W'` token grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl GridShape {
    pub const fn new(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
        }
    }

    pub const fn tokens_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sites outside frame 0.
    pub const fn prunable(&self) -> usize {
        self.frames.saturating_sub(1) * self.tokens_per_frame()
    }

    pub fn contains(&self, site: TokenSite) -> bool {
        site.t < self.frames && site.y < self.height && site.x < self.width
    }

    pub fn flat_index(&self, site: TokenSite) -> Result<usize> {
        if !self.contains(site) {
            return Err(EvsError::invalid(format!(
                "site ({}, {}, {}) outside grid {}x{}x{}",
                site.t, site.y, site.x, self.frames, self.height, self.width
            )));
        }
        Ok(self.flat_index_unchecked(site))
    }

    #[inline]
    pub(crate) const fn flat_index_unchecked(&self, site: TokenSite) -> usize {
        site.t * self.tokens_per_frame() + site.y * self.width + site.x
    }

    /// Inverse of [`GridShape::flat_index`]; `index` must be below `len()`.
    pub fn site(&self, index: usize) -> TokenSite {
        let per_frame = self.tokens_per_frame();
        let t = index / per_frame;
        let rem = index % per_frame;
        TokenSite {
            t,
            y: rem / self.width,
            x: rem % self.width,
        }
    }

    /// All sites in canonical order.
    pub fn sites(&self) -> impl Iterator<Item = TokenSite> + '_ {
        (0..self.len()).map(|i| self.site(i))
    }
}

/// Canonical flat index of `site` in a `frames`-frame clip over `geometry`.
pub fn flat_index(site: TokenSite, geometry: &PatchGeometry, frames: usize) -> Result<usize> {
    geometry.grid(frames).flat_index(site)
}
