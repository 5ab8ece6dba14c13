//! Retention-mask selection from temporal differences.
//!
//! Both the pixel-space and the embedding-space selector reduce a clip to a
//! [`DiffField`] (one non-negative score per site of frames `1..T`) and then feed
//! the same thresholding path in [`build_mask`].

mod embedding;
mod rgb;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

pub use embedding::{build_mask_embedding, compute_embedding_diffs};
pub use rgb::{build_mask_rgb, compute_rgb_diffs};

use crate::budget::{ceil_count, kept_count, validate_rate};
use crate::error::{EvsError, Result};
use crate::geometry::GridShape;
use crate::mask::{RetentionMask, SelectorTag};
use crate::scalar::Scalar;

/// Per-site temporal change scores for frames `1..T` of a `T`-frame grid.
///
/// Entry `(t - 1, y, x)` scores the change of site `(y, x)` from frame `t - 1` to `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffField<S = f64> {
    grid: GridShape,
    values: Vec<S>,
}

impl<S: Scalar> DiffField<S> {
    /// `grid` is the shape of the source clip (including frame 0).
    pub fn new(grid: GridShape, values: Vec<S>) -> Result<Self> {
        if grid.frames == 0 || grid.tokens_per_frame() == 0 {
            return Err(EvsError::invalid(
                "diff field needs at least one frame and one site",
            ));
        }
        if values.len() != grid.prunable() {
            return Err(EvsError::invalid(format!(
                "diff field for {} frames of {}x{} needs {} values, got {}",
                grid.frames,
                grid.height,
                grid.width,
                grid.prunable(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < S::zero()) {
            return Err(EvsError::invalid(
                "diff values must be finite and non-negative",
            ));
        }
        Ok(Self { grid, values })
    }

    /// Shape of the source grid, `T x H' x W'`.
    pub fn grid(&self) -> GridShape {
        self.grid
    }

    /// Number of diff frames, `T - 1`.
    pub fn frames(&self) -> usize {
        self.grid.frames - 1
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Score for the change into frame `t` (`1 <= t < T`).
    pub fn get(&self, t: usize, y: usize, x: usize) -> S {
        debug_assert!(t >= 1);
        self.values[(t - 1) * self.grid.tokens_per_frame() + y * self.grid.width + x]
    }
}

/// How the pruning rate is turned into a keep decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Keep every prunable site whose score is at least the nearest-rank
    /// `q`-quantile of all scores. Ties at the cut-off are all kept.
    Threshold,
    /// Keep exactly `round((1 - q) * N)` prunable sites: the highest scores,
    /// ties resolved by ascending canonical order.
    #[default]
    ExactBudget,
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdMode::Threshold => "threshold",
            ThresholdMode::ExactBudget => "exact-budget",
        })
    }
}

impl FromStr for ThresholdMode {
    type Err = EvsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(ThresholdMode::Threshold),
            "exact-budget" => Ok(ThresholdMode::ExactBudget),
            other => Err(EvsError::invalid(format!(
                "unknown threshold mode '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Rgb,
    Embedding,
}

impl Selector {
    pub fn tag(self) -> SelectorTag {
        match self {
            Selector::Rgb => SelectorTag::Rgb,
            Selector::Embedding => SelectorTag::Embedding,
        }
    }
}

impl FromStr for Selector {
    type Err = EvsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Selector::Rgb),
            "embedding" => Ok(Selector::Embedding),
            other => Err(EvsError::invalid(format!("unknown selector '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruningConfig {
    pub pruning_rate: f64,
    pub threshold_mode: ThresholdMode,
    pub selector: Selector,
}

impl PruningConfig {
    pub fn new(
        pruning_rate: f64,
        threshold_mode: ThresholdMode,
        selector: Selector,
    ) -> Result<Self> {
        validate_rate(pruning_rate)?;
        Ok(Self {
            pruning_rate,
            threshold_mode,
            selector,
        })
    }

    pub fn rgb(pruning_rate: f64, threshold_mode: ThresholdMode) -> Result<Self> {
        Self::new(pruning_rate, threshold_mode, Selector::Rgb)
    }

    pub fn embedding(pruning_rate: f64, threshold_mode: ThresholdMode) -> Result<Self> {
        Self::new(pruning_rate, threshold_mode, Selector::Embedding)
    }
}

#[inline]
fn total_cmp<S: Scalar>(a: &S, b: &S) -> Ordering {
    // values are validated finite
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Nearest-rank `q`-quantile over all pooled scores: the element at sorted
/// position `ceil(q * N) - 1` (position 0 when `q = 0`).
pub fn percentile_threshold<S: Scalar>(diffs: &DiffField<S>, q: f64) -> Result<S> {
    validate_rate(q)?;
    if diffs.is_empty() {
        return Err(EvsError::invalid(
            "cannot take a percentile of an empty diff field",
        ));
    }
    Ok(nearest_rank(diffs.values(), q))
}

pub(crate) fn nearest_rank<S: Scalar>(values: &[S], q: f64) -> S {
    let n = values.len();
    let pos = ceil_count(q, n).saturating_sub(1);
    let mut scratch = values.to_vec();
    let (_, v, _) = scratch.select_nth_unstable_by(pos, total_cmp);
    *v
}

/// Turns a diff field into a retention mask. Frame 0 is always kept.
pub fn build_mask<S: Scalar>(
    diffs: &DiffField<S>,
    config: &PruningConfig,
) -> Result<RetentionMask> {
    let q = validate_rate(config.pruning_rate)?;
    let grid = diffs.grid();
    let tag = config.selector.tag();
    if diffs.is_empty() || q == 0.0 {
        return Ok(RetentionMask::from_fn(grid, q, tag, |_| true));
    }
    let offset = grid.tokens_per_frame();
    let values = diffs.values();
    let keep = match config.threshold_mode {
        ThresholdMode::Threshold => {
            let d = nearest_rank(values, q);
            values.iter().map(|v| *v >= d).collect::<BitVec<u8, Msb0>>()
        }
        ThresholdMode::ExactBudget => top_k(values, kept_count(q, values.len())),
    };
    Ok(RetentionMask::from_fn(grid, q, tag, |i| keep[i - offset]))
}

/// Marks the `k` largest values, ties broken by lower index first.
fn top_k<S: Scalar>(values: &[S], k: usize) -> BitVec<u8, Msb0> {
    let n = values.len();
    let mut keep = bitvec![u8, Msb0; 0; n];
    if k == 0 {
        return keep;
    }
    if k >= n {
        keep.fill(true);
        return keep;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.select_nth_unstable_by(k - 1, |&a, &b| {
        total_cmp(&values[b], &values[a]).then(a.cmp(&b))
    });
    for &i in &order[..k] {
        keep.set(i, true);
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(frames: usize, h: usize, w: usize, values: Vec<f64>) -> DiffField<f64> {
        DiffField::new(GridShape::new(frames, h, w), values).unwrap()
    }

    #[test]
    fn percentile_examples() {
        let d = field(2, 2, 2, vec![3.0, 1.0, 4.0, 2.0]);
        assert_eq!(percentile_threshold(&d, 0.5).unwrap(), 2.0);
        assert_eq!(percentile_threshold(&d, 0.0).unwrap(), 1.0);
        let c = field(3, 2, 2, vec![7.0; 8]);
        for q in [0.0, 0.3, 0.5, 0.99] {
            assert_eq!(percentile_threshold(&c, q).unwrap(), 7.0);
        }
    }

    #[test]
    fn percentile_rejects_empty_and_bad_rate() {
        let empty = field(1, 2, 2, vec![]);
        assert!(percentile_threshold(&empty, 0.5).is_err());
        let d = field(2, 1, 1, vec![1.0]);
        assert!(percentile_threshold(&d, 1.0).is_err());
    }

    #[test]
    fn zero_rate_keeps_everything() {
        let d = field(3, 2, 2, (0..8).map(f64::from).collect());
        for mode in [ThresholdMode::Threshold, ThresholdMode::ExactBudget] {
            let m = build_mask(&d, &PruningConfig::rgb(0.0, mode).unwrap()).unwrap();
            assert_eq!(m.kept_count(), 12);
        }
    }

    #[test]
    fn constant_field_budget() {
        let d = field(2, 2, 2, vec![0.0; 4]);
        let m = build_mask(
            &d,
            &PruningConfig::rgb(0.75, ThresholdMode::ExactBudget).unwrap(),
        )
        .unwrap();
        assert_eq!(m.kept_count(), 5);
        // tie broken by canonical order: first site of frame 1
        assert!(m.is_kept(4));
        let m = build_mask(
            &d,
            &PruningConfig::rgb(0.75, ThresholdMode::Threshold).unwrap(),
        )
        .unwrap();
        assert_eq!(m.kept_count(), 8);
    }

    #[test]
    fn single_frame_is_all_kept() {
        let d = field(1, 3, 2, vec![]);
        let m = build_mask(
            &d,
            &PruningConfig::rgb(0.9, ThresholdMode::ExactBudget).unwrap(),
        )
        .unwrap();
        assert_eq!(m.kept_count(), 6);
        assert_eq!(m.pruning_rate(), 0.9);
    }

    #[test]
    fn exact_budget_prefers_largest() {
        let d = field(2, 2, 2, vec![0.5, 3.0, 0.5, 1.0]);
        let m = build_mask(
            &d,
            &PruningConfig::rgb(0.5, ThresholdMode::ExactBudget).unwrap(),
        )
        .unwrap();
        let kept: Vec<usize> = m.kept_indices().collect();
        assert_eq!(kept, vec![0, 1, 2, 3, 5, 7]);
        assert_eq!(m.selector(), SelectorTag::Rgb);
    }

    proptest::proptest! {
        #[test]
        fn nesting_and_anchor(
            values in proptest::collection::vec(0u8..20, 4..64),
            q1 in 0.0f64..0.89,
        ) {
            let n = values.len() / 4 * 4;
            let grid = GridShape::new(n / 4 + 1, 2, 2);
            let d = DiffField::new(grid, values[..n].iter().map(|v| f64::from(*v)).collect()).unwrap();
            let a = build_mask(&d, &PruningConfig::rgb(q1, ThresholdMode::Threshold).unwrap()).unwrap();
            let b = build_mask(&d, &PruningConfig::rgb(q1 + 0.1, ThresholdMode::Threshold).unwrap()).unwrap();
            proptest::prop_assert!(a.frame_bits(0).all() && b.frame_bits(0).all());
            for i in b.kept_indices() {
                proptest::prop_assert!(a.is_kept(i));
            }
            // threshold mode keeps at least (1 - q) N - 1 prunable sites
            let kept = (b.kept_count() - 4) as f64;
            proptest::prop_assert!(kept / n as f64 >= (1.0 - (q1 + 0.1)) - 1.0 / n as f64);
        }

        #[test]
        fn exact_budget_count(values in proptest::collection::vec(0u8..5, 1..80), q in 0.0f64..0.99) {
            let grid = GridShape::new(values.len() + 1, 1, 1);
            let d = DiffField::new(grid, values.iter().map(|v| f32::from(*v)).collect()).unwrap();
            let m = build_mask(&d, &PruningConfig::rgb(q, ThresholdMode::ExactBudget).unwrap()).unwrap();
            proptest::prop_assert_eq!(m.kept_count(), 1 + kept_count(q, values.len()));
        }
    }
}
