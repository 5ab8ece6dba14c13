//! Dense pixel clips and post-encoder embedding grids.

use crate::error::{EvsError, Result};
use crate::geometry::{GridShape, PatchGeometry};
use crate::scalar::Scalar;

/// Number of colour channels in a clip.
pub const CLIP_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum PixelData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl PixelData {
    pub fn len(&self) -> usize {
        match self {
            PixelData::U8(v) => v.len(),
            PixelData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> &'static str {
        match self {
            PixelData::U8(_) => "u8",
            PixelData::F32(_) => "f32",
        }
    }
}

/// A `T x 3 x H x W` video clip stored frame-major, channel-planar.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: usize,
    height: usize,
    width: usize,
    data: PixelData,
}

impl VideoClip {
    pub fn new(frames: usize, height: usize, width: usize, data: PixelData) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(EvsError::invalid(format!(
                "clip dimensions must be positive, got T={frames} H={height} W={width}"
            )));
        }
        let expected = frames * CLIP_CHANNELS * height * width;
        if data.len() != expected {
            return Err(EvsError::invalid(format!(
                "clip {frames}x{CLIP_CHANNELS}x{height}x{width} needs {expected} samples, got {}",
                data.len()
            )));
        }
        if let PixelData::F32(v) = &data {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EvsError::invalid("clip contains non-finite pixels"));
            }
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        CLIP_CHANNELS
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &PixelData {
        &self.data
    }

    pub fn into_data(self) -> PixelData {
        self.data
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, CLIP_CHANNELS, self.height, self.width]
    }

    #[inline]
    pub fn offset(&self, t: usize, c: usize, y: usize, x: usize) -> usize {
        ((t * CLIP_CHANNELS + c) * self.height + y) * self.width + x
    }

    #[inline]
    pub fn pixel<S: Scalar>(&self, t: usize, c: usize, y: usize, x: usize) -> S {
        let i = self.offset(t, c, y, x);
        match &self.data {
            PixelData::U8(v) => S::lift_u8(v[i]),
            PixelData::F32(v) => S::lift_f32(v[i]),
        }
    }

    /// Geometry for this clip's frame size.
    pub fn geometry(
        &self,
        encoder_patch: usize,
        projector_downsample: usize,
    ) -> Result<PatchGeometry> {
        PatchGeometry::new(self.width, self.height, encoder_patch, projector_downsample)
    }

    pub fn check_geometry(&self, geometry: &PatchGeometry) -> Result<()> {
        if geometry.frame_width() != self.width || geometry.frame_height() != self.height {
            return Err(EvsError::invalid(format!(
                "geometry is for {}x{} frames but clip is {}x{}",
                geometry.frame_width(),
                geometry.frame_height(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }
}

/// Post-encoder features, one `C`-vector per token site, stored `T x H' x W' x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrid<S = f32> {
    shape: GridShape,
    channels: usize,
    data: Vec<S>,
}

impl<S: Scalar> EmbeddingGrid<S> {
    pub fn new(shape: GridShape, channels: usize, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() || channels == 0 {
            return Err(EvsError::invalid(format!(
                "embedding grid {}x{}x{} with {channels} channels is empty",
                shape.frames, shape.height, shape.width
            )));
        }
        let expected = shape.len() * channels;
        if data.len() != expected {
            return Err(EvsError::invalid(format!(
                "embedding grid needs {expected} elements, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EvsError::invalid(
                "embedding grid contains NaN or infinite values",
            ));
        }
        Ok(Self {
            shape,
            channels,
            data,
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Feature vector at canonical index `index`.
    #[inline]
    pub fn feature(&self, index: usize) -> &[S] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn cast<T: Scalar>(&self) -> EmbeddingGrid<T> {
        EmbeddingGrid {
            shape: self.shape,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|v| T::from(*v).unwrap_or_else(T::zero))
                .collect(),
        }
    }
}
