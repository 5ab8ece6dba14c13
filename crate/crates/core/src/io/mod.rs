//! Readers and writers for clip, embedding, mask and token files.
//!
//! Every format is a [`container`] with a JSON header and a little-endian
//! payload. Loaders reject any payload whose length disagrees with the header
//! and re-validate the in-memory invariants of the decoded value.

pub mod container;
pub mod netpbm;

use std::path::Path;

#[cfg(test)]
use bitvec::prelude::*;
use serde_json::json;

use container::{check_payload_len, decode, encode, Header, Kind, Magic};

use crate::error::{EvsError, Result};
use crate::geometry::{GridShape, TokenSite};
use crate::mask::{MaskBits, RetentionMask, SelectorTag};
use crate::scalar::Scalar;
use crate::stream::{PositionMode, TokenEntry, TokenStream};
use crate::tensor::{EmbeddingGrid, PixelData, VideoClip, CLIP_CHANNELS};

/// Bytes per token record before the optional payload.
pub const TOKEN_RECORD_BYTES: usize = 12;

// ---- clips ----

pub fn encode_clip(clip: &VideoClip) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    match clip.data() {
        PixelData::U8(v) => payload.extend_from_slice(v),
        PixelData::F32(v) => container::f32s_to_le(v.iter().copied(), &mut payload),
    }
    let header = Header {
        kind: Kind::Clip,
        dtype: clip.data().dtype().into(),
        shape: clip.shape().iter().map(|&d| d as u64).collect(),
        layout: "TCHW".into(),
        meta: json!({}),
    };
    encode(Magic::Tensor, &header, &payload)
}

pub fn decode_clip(bytes: &[u8]) -> Result<VideoClip> {
    let (header, payload) = decode(Magic::Tensor, bytes)?;
    header.expect_kind(Kind::Clip)?;
    let dims = header.expect_rank(4)?;
    if dims[1] != CLIP_CHANNELS {
        return Err(EvsError::UnsupportedFormat(format!(
            "clips must have {CLIP_CHANNELS} channels, found {}",
            dims[1]
        )));
    }
    let n = header.element_count()?;
    let data = match header.dtype.as_str() {
        "u8" => {
            check_payload_len(payload, n)?;
            PixelData::U8(payload.to_vec())
        }
        "f32" => {
            check_payload_len(
                payload,
                n.checked_mul(4)
                    .ok_or_else(|| EvsError::corrupt("size overflow"))?,
            )?;
            PixelData::F32(container::le_to_f32s(payload))
        }
        other => return Err(EvsError::UnsupportedFormat(format!("clip dtype '{other}'"))),
    };
    VideoClip::new(dims[0], dims[2], dims[3], data).map_err(|e| EvsError::corrupt(e.to_string()))
}

pub fn write_clip(clip: &VideoClip, path: impl AsRef<Path>) -> Result<()> {
    container::write_atomic(path.as_ref(), &encode_clip(clip)?)
}

pub fn read_clip(path: impl AsRef<Path>) -> Result<VideoClip> {
    decode_clip(&container::read_file(path.as_ref())?)
}

/// Reads a `.tbin` clip, or a directory of binary PPM/PGM frames.
pub fn read_clip_or_frames(path: impl AsRef<Path>) -> Result<VideoClip> {
    let path = path.as_ref();
    if path.is_dir() {
        netpbm::read_frame_dir(path)
    } else {
        read_clip(path)
    }
}

// ---- embeddings ----

pub fn encode_embeddings<S: Scalar>(grid: &EmbeddingGrid<S>) -> Result<Vec<u8>> {
    let shape = grid.shape();
    let mut payload = Vec::with_capacity(grid.data().len() * 4);
    container::f32s_to_le(grid.data().iter().map(|v| v.narrow_f32()), &mut payload);
    let header = Header {
        kind: Kind::Embedding,
        dtype: "f32".into(),
        shape: [shape.frames, shape.height, shape.width, grid.channels()]
            .iter()
            .map(|&d| d as u64)
            .collect(),
        layout: "THWC".into(),
        meta: json!({}),
    };
    encode(Magic::Tensor, &header, &payload)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingGrid<f32>> {
    let (header, payload) = decode(Magic::Tensor, bytes)?;
    header.expect_kind(Kind::Embedding)?;
    if header.dtype != "f32" {
        return Err(EvsError::UnsupportedFormat(format!(
            "embedding dtype '{}'",
            header.dtype
        )));
    }
    let dims = header.expect_rank(4)?;
    let n = header.element_count()?;
    check_payload_len(
        payload,
        n.checked_mul(4)
            .ok_or_else(|| EvsError::corrupt("size overflow"))?,
    )?;
    EmbeddingGrid::new(
        GridShape::new(dims[0], dims[1], dims[2]),
        dims[3],
        container::le_to_f32s(payload),
    )
    .map_err(|e| EvsError::corrupt(e.to_string()))
}

pub fn write_embeddings<S: Scalar>(grid: &EmbeddingGrid<S>, path: impl AsRef<Path>) -> Result<()> {
    container::write_atomic(path.as_ref(), &encode_embeddings(grid)?)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingGrid<f32>> {
    decode_embeddings(&container::read_file(path.as_ref())?)
}

// ---- masks ----

pub fn encode_mask(mask: &RetentionMask) -> Result<Vec<u8>> {
    let shape = mask.shape();
    let header = Header {
        kind: Kind::Mask,
        dtype: "bit".into(),
        shape: vec![shape.frames as u64, shape.height as u64, shape.width as u64],
        layout: "THW-msb0".into(),
        meta: json!({
            "pruning_rate": mask.pruning_rate(),
            "selector": mask.selector().as_str(),
        }),
    };
    encode(Magic::Mask, &header, mask.bits().as_raw_slice())
}

pub fn decode_mask(bytes: &[u8]) -> Result<RetentionMask> {
    let (header, payload) = decode(Magic::Mask, bytes)?;
    header.expect_kind(Kind::Mask)?;
    if header.dtype != "bit" {
        return Err(EvsError::UnsupportedFormat(format!(
            "mask dtype '{}'",
            header.dtype
        )));
    }
    let dims = header.expect_rank(3)?;
    let n = header.element_count()?;
    check_payload_len(payload, n.div_ceil(8))?;
    let mut bits = MaskBits::from_slice(payload);
    if bits[n..].any() {
        return Err(EvsError::corrupt("mask padding bits must be zero"));
    }
    bits.truncate(n);
    let rate = header
        .meta
        .get("pruning_rate")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| EvsError::corrupt("mask meta lacks pruning_rate"))?;
    let selector: SelectorTag = header
        .meta
        .get("selector")
        .and_then(|v| v.as_str())
        .ok_or_else(|| EvsError::corrupt("mask meta lacks selector"))?
        .parse()
        .map_err(|e: EvsError| EvsError::corrupt(e.to_string()))?;
    RetentionMask::new(
        GridShape::new(dims[0], dims[1], dims[2]),
        bits,
        rate,
        selector,
    )
}

pub fn write_mask(mask: &RetentionMask, path: impl AsRef<Path>) -> Result<()> {
    container::write_atomic(path.as_ref(), &encode_mask(mask)?)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<RetentionMask> {
    decode_mask(&container::read_file(path.as_ref())?)
}

// ---- token streams ----

fn coord(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v)
        .map_err(|_| EvsError::invalid(format!("{what} {v} does not fit a 16-bit token record")))
}

pub fn encode_tokens<S: Scalar>(stream: &TokenStream<S>) -> Result<Vec<u8>> {
    let shape = stream.shape();
    for (d, what) in [
        (shape.frames, "frame count"),
        (shape.height, "grid height"),
        (shape.width, "grid width"),
    ] {
        coord(d, what)?;
    }
    let c = stream.channels();
    let mut payload = Vec::with_capacity(stream.len() * (TOKEN_RECORD_BYTES + 4 * c));
    for e in stream.entries() {
        payload.extend_from_slice(&e.position_id.to_le_bytes());
        payload.extend_from_slice(&coord(e.site.t, "t")?.to_le_bytes());
        payload.extend_from_slice(&coord(e.site.y, "y")?.to_le_bytes());
        payload.extend_from_slice(&coord(e.site.x, "x")?.to_le_bytes());
        payload.extend_from_slice(&0u16.to_le_bytes());
        container::f32s_to_le(e.payload.iter().map(|v| v.narrow_f32()), &mut payload);
    }
    let header = Header {
        kind: Kind::Tokens,
        dtype: if c == 0 { "none".into() } else { "f32".into() },
        shape: vec![stream.len() as u64, c as u64],
        layout: "record:u32,u16,u16,u16,u16+f32*C".into(),
        meta: json!({
            "position_mode": stream.position_mode().as_str(),
            "grid": [shape.frames, shape.height, shape.width],
            "source_token_count": stream.source_token_count(),
        }),
    };
    encode(Magic::Tokens, &header, &payload)
}

pub fn decode_tokens(bytes: &[u8]) -> Result<TokenStream<f32>> {
    let (header, payload) = decode(Magic::Tokens, bytes)?;
    header.expect_kind(Kind::Tokens)?;
    let dims = header.expect_rank(2)?;
    let (count, c) = (dims[0], dims[1]);
    match (header.dtype.as_str(), c) {
        ("none", 0) | ("f32", 1..) => {}
        (other, _) => {
            return Err(EvsError::UnsupportedFormat(format!(
                "token dtype '{other}' with {c} payload channels"
            )))
        }
    }
    let record = TOKEN_RECORD_BYTES + 4 * c;
    check_payload_len(
        payload,
        count
            .checked_mul(record)
            .ok_or_else(|| EvsError::corrupt("size overflow"))?,
    )?;
    let mode: PositionMode = header
        .meta
        .get("position_mode")
        .and_then(|v| v.as_str())
        .ok_or_else(|| EvsError::corrupt("token meta lacks position_mode"))?
        .parse()
        .map_err(|e: EvsError| EvsError::corrupt(e.to_string()))?;
    let grid: Vec<usize> = header
        .meta
        .get("grid")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .filter(|g: &Vec<usize>| g.len() == 3)
        .ok_or_else(|| EvsError::corrupt("token meta lacks a 3-element grid"))?;
    let shape = GridShape::new(grid[0], grid[1], grid[2]);
    let u16_at = |r: &[u8], o: usize| u16::from_le_bytes([r[o], r[o + 1]]) as usize;
    let entries = payload
        .chunks_exact(record.max(1))
        .take(count)
        .map(|r| TokenEntry {
            position_id: u32::from_le_bytes([r[0], r[1], r[2], r[3]]),
            site: TokenSite::new(u16_at(r, 4), u16_at(r, 6), u16_at(r, 8)),
            payload: container::le_to_f32s(&r[TOKEN_RECORD_BYTES..]),
        })
        .collect();
    TokenStream::new(shape, c, mode, entries)
}

pub fn write_tokens<S: Scalar>(stream: &TokenStream<S>, path: impl AsRef<Path>) -> Result<()> {
    container::write_atomic(path.as_ref(), &encode_tokens(stream)?)
}

pub fn read_tokens(path: impl AsRef<Path>) -> Result<TokenStream<f32>> {
    decode_tokens(&container::read_file(path.as_ref())?)
}
