//! Shared container layout.
//!
//! ```text
//! offset 0   8 bytes   magic: 7-byte format tag + 1-byte version
//! offset 8   u32 LE    header length L
//! offset 12  L bytes   UTF-8 JSON header {kind, dtype, shape, layout, meta}
//! offset 12+L          raw little-endian payload
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EvsError, Result};

pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Magic {
    /// `.tbin`: clips, embeddings, calibration tables.
    Tensor,
    /// `.evsm`: bit-packed retention masks.
    Mask,
    /// `.evst`: token streams.
    Tokens,
}

impl Magic {
    fn tag(self) -> &'static [u8; 7] {
        match self {
            Magic::Tensor => b"EVSTBIN",
            Magic::Mask => b"EVSMASK",
            Magic::Tokens => b"EVSTOKS",
        }
    }

    pub fn bytes(self) -> [u8; 8] {
        let mut out = [0u8; 8];
        out[..7].copy_from_slice(self.tag());
        out[7] = VERSION;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Clip,
    Embedding,
    Mask,
    Tokens,
    Meta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: Kind,
    pub dtype: String,
    pub shape: Vec<u64>,
    pub layout: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Header {
    pub fn dims(&self) -> Result<Vec<usize>> {
        self.shape
            .iter()
            .map(|&d| {
                usize::try_from(d).map_err(|_| EvsError::corrupt("dimension exceeds address space"))
            })
            .collect()
    }

    pub fn element_count(&self) -> Result<usize> {
        self.dims()?
            .into_iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(d))
            .ok_or_else(|| EvsError::corrupt("shape product overflows"))
    }

    pub fn expect_kind(&self, kind: Kind) -> Result<()> {
        if self.kind != kind {
            return Err(EvsError::UnsupportedFormat(format!(
                "expected a {kind:?} file, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn expect_rank(&self, rank: usize) -> Result<Vec<usize>> {
        let dims = self.dims()?;
        if dims.len() != rank {
            return Err(EvsError::corrupt(format!(
                "{:?} shape must have {rank} dimensions, found {}",
                self.kind,
                dims.len()
            )));
        }
        Ok(dims)
    }
}

pub fn encode(magic: Magic, header: &Header, payload: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| EvsError::invalid(format!("header: {e}")))?;
    let len = u32::try_from(json.len()).map_err(|_| EvsError::invalid("header too large"))?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(&magic.bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Splits a container into header and payload, checking magic and version.
pub fn decode(magic: Magic, bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 12 {
        return Err(EvsError::corrupt("file shorter than container preamble"));
    }
    if &bytes[..7] != magic.tag() {
        return Err(EvsError::UnsupportedFormat(format!(
            "bad magic {:?}, expected {}",
            String::from_utf8_lossy(&bytes[..7]),
            String::from_utf8_lossy(magic.tag())
        )));
    }
    if bytes[7] != VERSION {
        return Err(EvsError::UnsupportedFormat(format!(
            "container version {} not supported",
            bytes[7]
        )));
    }
    let len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let body = &bytes[12..];
    if len > body.len() {
        return Err(EvsError::corrupt(format!(
            "header length {len} exceeds remaining {} bytes",
            body.len()
        )));
    }
    let header: Header = serde_json::from_slice(&body[..len])
        .map_err(|e| EvsError::corrupt(format!("unparseable header: {e}")))?;
    Ok((header, &body[len..]))
}

pub fn check_payload_len(payload: &[u8], expected: usize) -> Result<()> {
    if payload.len() != expected {
        return Err(EvsError::corrupt(format!(
            "header declares {expected} payload bytes but file carries {}",
            payload.len()
        )));
    }
    Ok(())
}

/// Writes via a sibling temporary file and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| EvsError::Io(e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    Ok(fs::read(path)?)
}

pub fn f32s_to_le(values: impl Iterator<Item = f32>, out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn le_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn le_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}
