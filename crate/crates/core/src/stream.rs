//! Pruned token streams: retained sites, their position IDs and optional payloads.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{EvsError, Result};
use crate::geometry::{GridShape, TokenSite};
use crate::scalar::Scalar;

/// How position IDs are assigned to retained tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionMode {
    /// Retained tokens keep the ID they had in the unpruned sequence.
    Preserving,
    /// Retained tokens are renumbered `0..K`.
    Sequential,
}

impl PositionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PositionMode::Preserving => "preserving",
            PositionMode::Sequential => "sequential",
        }
    }
}

impl fmt::Display for PositionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PositionMode {
    type Err = EvsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preserving" | "preserve" => Ok(PositionMode::Preserving),
            "sequential" => Ok(PositionMode::Sequential),
            other => Err(EvsError::invalid(format!(
                "unknown position mode '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenEntry<S = f32> {
    pub position_id: u32,
    pub site: TokenSite,
    /// Feature vector of length `channels`; empty for mask-only streams.
    pub payload: Vec<S>,
}

/// Ordered retained tokens over a source grid.
///
/// `source_token_count` (the unpruned vision token count) lets a host pipeline
/// continue numbering text tokens under either position mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStream<S = f32> {
    shape: GridShape,
    channels: usize,
    position_mode: PositionMode,
    entries: Vec<TokenEntry<S>>,
}

impl<S: Scalar> TokenStream<S> {
    /// Validates ordering, bounds, payload widths and position IDs.
    pub fn new(
        shape: GridShape,
        channels: usize,
        position_mode: PositionMode,
        entries: Vec<TokenEntry<S>>,
    ) -> Result<Self> {
        let mut prev: Option<usize> = None;
        for (k, e) in entries.iter().enumerate() {
            if !shape.contains(e.site) {
                return Err(EvsError::InvalidStream(format!(
                    "entry {k} site ({}, {}, {}) outside grid",
                    e.site.t, e.site.y, e.site.x
                )));
            }
            let idx = shape.flat_index_unchecked(e.site);
            if prev.is_some_and(|p| idx <= p) {
                return Err(EvsError::InvalidStream(format!(
                    "entry {k} is not strictly after its predecessor in canonical order"
                )));
            }
            prev = Some(idx);
            if e.payload.len() != channels {
                return Err(EvsError::InvalidStream(format!(
                    "entry {k} carries {} payload values, expected {channels}",
                    e.payload.len()
                )));
            }
            let expected = match position_mode {
                PositionMode::Preserving => idx,
                PositionMode::Sequential => k,
            };
            if e.position_id as usize != expected {
                return Err(EvsError::InvalidStream(format!(
                    "entry {k} has position id {} but {position_mode} mode requires {expected}",
                    e.position_id
                )));
            }
        }
        Ok(Self {
            shape,
            channels,
            position_mode,
            entries,
        })
    }

    pub(crate) fn from_parts_unchecked(
        shape: GridShape,
        channels: usize,
        position_mode: PositionMode,
        entries: Vec<TokenEntry<S>>,
    ) -> Self {
        Self {
            shape,
            channels,
            position_mode,
            entries,
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    /// Payload width; zero for mask-only streams.
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn position_mode(&self) -> PositionMode {
        self.position_mode
    }

    pub fn source_token_count(&self) -> usize {
        self.shape.len()
    }

    pub fn entries(&self) -> &[TokenEntry<S>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position_ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.position_id).collect()
    }

    pub fn sites(&self) -> impl Iterator<Item = TokenSite> + '_ {
        self.entries.iter().map(|e| e.site)
    }

    /// Retained payloads packed back to back (`len() x channels`).
    pub fn packed_payload(&self) -> Vec<S> {
        self.entries
            .iter()
            .flat_map(|e| e.payload.iter().copied())
            .collect()
    }
}
