//! Retention masks and per-frame retention statistics.

use std::fmt;
use std::str::FromStr;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EvsError, Result};
use crate::geometry::GridShape;

/// Which policy produced a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorTag {
    Rgb,
    Embedding,
    Random,
    Subsample,
    Merge,
}

impl SelectorTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectorTag::Rgb => "rgb",
            SelectorTag::Embedding => "embedding",
            SelectorTag::Random => "random",
            SelectorTag::Subsample => "subsample",
            SelectorTag::Merge => "merge",
        }
    }
}

impl fmt::Display for SelectorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectorTag {
    type Err = EvsError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rgb" => SelectorTag::Rgb,
            "embedding" => SelectorTag::Embedding,
            "random" => SelectorTag::Random,
            "subsample" => SelectorTag::Subsample,
            "merge" => SelectorTag::Merge,
            other => return Err(EvsError::invalid(format!("unknown selector tag '{other}'"))),
        })
    }
}

/// Packed storage: canonical order, most significant bit first in each byte.
pub type MaskBits = BitVec<u8, Msb0>;

/// Keep/drop decision for every site of a `T x H' x W'` grid.
///
/// Every site of frame 0 is always kept.
#[derive(Debug, Clone, PartialEq)]
pub struct RetentionMask {
    shape: GridShape,
    bits: MaskBits,
    pruning_rate: f64,
    selector: SelectorTag,
}

impl RetentionMask {
    pub fn new(
        shape: GridShape,
        mut bits: MaskBits,
        pruning_rate: f64,
        selector: SelectorTag,
    ) -> Result<Self> {
        if bits.len() != shape.len() {
            return Err(EvsError::InvalidMask(format!(
                "mask holds {} bits but grid has {} sites",
                bits.len(),
                shape.len()
            )));
        }
        if shape.is_empty() {
            return Err(EvsError::InvalidMask("mask grid is empty".into()));
        }
        if !bits[..shape.tokens_per_frame()].all() {
            return Err(EvsError::InvalidMask("frame 0 must be fully kept".into()));
        }
        bits.set_uninitialized(false);
        Ok(Self {
            shape,
            bits,
            pruning_rate,
            selector,
        })
    }

    /// Mask that keeps every site.
    pub fn all_kept(shape: GridShape, selector: SelectorTag) -> Self {
        let mut bits = bitvec![u8, Msb0; 1; shape.len()];
        bits.set_uninitialized(false);
        Self {
            shape,
            bits,
            pruning_rate: 0.0,
            selector,
        }
    }

    /// Builds a mask from a keep predicate over canonical indices; frame 0 is forced on.
    pub(crate) fn from_fn(
        shape: GridShape,
        pruning_rate: f64,
        selector: SelectorTag,
        mut keep: impl FnMut(usize) -> bool,
    ) -> Self {
        let per_frame = shape.tokens_per_frame();
        let mut bits: MaskBits = (0..shape.len()).map(|i| i < per_frame || keep(i)).collect();
        bits.set_uninitialized(false);
        Self {
            shape,
            bits,
            pruning_rate,
            selector,
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn bits(&self) -> &MaskBits {
        &self.bits
    }

    pub fn pruning_rate(&self) -> f64 {
        self.pruning_rate
    }

    pub fn selector(&self) -> SelectorTag {
        self.selector
    }

    #[inline]
    pub fn is_kept(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn kept_count(&self) -> usize {
        self.bits.count_ones()
    }

    /// Canonical indices of kept sites, ascending.
    pub fn kept_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter_ones()
    }

    pub fn frame_bits(&self, t: usize) -> &BitSlice<u8, Msb0> {
        let n = self.shape.tokens_per_frame();
        &self.bits[t * n..(t + 1) * n]
    }

    pub fn per_frame_counts(&self) -> Vec<usize> {
        (0..self.shape.frames)
            .map(|t| self.frame_bits(t).count_ones())
            .collect()
    }

    /// Number of sites where the two masks disagree.
    pub fn disagreement(&self, other: &RetentionMask) -> Result<usize> {
        if self.shape != other.shape {
            return Err(EvsError::invalid("masks have different shapes"));
        }
        Ok(self
            .bits
            .iter()
            .zip(other.bits.iter())
            .filter(|(a, b)| **a != **b)
            .count())
    }

    /// Number of sites kept by both masks.
    pub fn overlap(&self, other: &RetentionMask) -> Result<usize> {
        if self.shape != other.shape {
            return Err(EvsError::invalid("masks have different shapes"));
        }
        Ok(self
            .bits
            .iter()
            .zip(other.bits.iter())
            .filter(|(a, b)| **a && **b)
            .count())
    }
}

/// Retained-token summary for a mask.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetentionReport {
    pub total_sites: usize,
    pub retained: usize,
    pub fraction: f64,
    pub per_frame: Vec<usize>,
}

impl fmt::Display for RetentionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "retained {} of {} tokens",
            self.retained, self.total_sites
        )?;
        writeln!(f, "retained_fraction {:.6}", self.fraction)?;
        let frames: Vec<String> = self.per_frame.iter().map(|c| c.to_string()).collect();
        write!(f, "per_frame {}", frames.join(","))
    }
}

pub fn stream_stats(mask: &RetentionMask) -> RetentionReport {
    let retained = mask.kept_count();
    let total_sites = mask.shape().len();
    RetentionReport {
        total_sites,
        retained,
        fraction: retained as f64 / total_sites as f64,
        per_frame: mask.per_frame_counts(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_all_kept() {
        let m = RetentionMask::all_kept(GridShape::new(2, 2, 2), SelectorTag::Rgb);
        let r = stream_stats(&m);
        assert_eq!(r.fraction, 1.0);
        assert_eq!(r.per_frame, vec![4, 4]);
    }

    #[test]
    fn stats_frame_zero_only() {
        let shape = GridShape::new(2, 2, 2);
        let m = RetentionMask::from_fn(shape, 0.9, SelectorTag::Rgb, |_| false);
        let r = stream_stats(&m);
        assert_eq!(r.retained, 4);
        assert_eq!(r.fraction, 0.5);
        assert_eq!(r.per_frame, vec![4, 0]);
    }

    #[test]
    fn frame_zero_enforced() {
        let shape = GridShape::new(2, 2, 2);
        let mut bits = bitvec![u8, Msb0; 1; 8];
        bits.set(2, false);
        assert!(matches!(
            RetentionMask::new(shape, bits, 0.5, SelectorTag::Rgb),
            Err(EvsError::InvalidMask(_))
        ));
    }

    #[test]
    fn stats_match_popcount_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let shape = GridShape::new(
                rng.random_range(1..6),
                rng.random_range(1..6),
                rng.random_range(1..6),
            );
            let m =
                RetentionMask::from_fn(shape, 0.5, SelectorTag::Random, |_| rng.random_bool(0.4));
            // popcount over raw packed bytes, per frame via explicit loop
            let raw = m.bits().as_raw_slice();
            let total: u32 = raw.iter().map(|b| b.count_ones()).sum();
            let r = stream_stats(&m);
            assert_eq!(r.retained, total as usize);
            let n = shape.tokens_per_frame();
            for t in 0..shape.frames {
                let mut c = 0;
                for i in t * n..(t + 1) * n {
                    if raw[i / 8] & (0x80 >> (i % 8)) != 0 {
                        c += 1;
                    }
                }
                assert_eq!(r.per_frame[t], c);
            }
        }
    }
}
