//! Reference token-reduction strategies compared against temporal pruning at a
//! matched budget: uniform random pruning, whole-frame subsampling and greedy
//! similarity merging.
//!
//! Random pruning and frame subsampling keep frame 0 whole, like the temporal
//! selectors, so comparisons isolate the selection policy itself.

mod merge;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use merge::{merge_to_count, merge_tokens, merge_tokens_matched, merge_tokens_weighted};

use crate::budget::{ceil_count, kept_count, validate_rate};
use crate::error::{EvsError, Result};
use crate::geometry::GridShape;
use crate::mask::{RetentionMask, SelectorTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Random,
    Subsample,
    Merge,
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineMethod::Random => "random",
            BaselineMethod::Subsample => "subsample",
            BaselineMethod::Merge => "merge",
        })
    }
}

impl FromStr for BaselineMethod {
    type Err = EvsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(BaselineMethod::Random),
            "subsample" => Ok(BaselineMethod::Subsample),
            "merge" => Ok(BaselineMethod::Merge),
            other => Err(EvsError::invalid(format!("unknown baseline '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub pruning_rate: f64,
    /// Only used by [`BaselineMethod::Random`].
    pub seed: u64,
}

impl BaselineConfig {
    pub fn new(method: BaselineMethod, pruning_rate: f64, seed: u64) -> Result<Self> {
        validate_rate(pruning_rate)?;
        Ok(Self {
            method,
            pruning_rate,
            seed,
        })
    }
}

/// Retained total of an exact-budget temporal mask at rate `q`:
/// `H' * W' + round((1 - q) * (T - 1) * H' * W')`.
pub fn matched_budget(shape: GridShape, q: f64) -> Result<usize> {
    let q = validate_rate(q)?;
    Ok(shape.tokens_per_frame() + kept_count(q, shape.prunable()))
}

/// Keeps frame 0 plus `round((1 - q) * N)` prunable sites drawn uniformly without
/// replacement from a ChaCha8 stream seeded with `config.seed`.
pub fn random_mask(shape: GridShape, config: &BaselineConfig) -> Result<RetentionMask> {
    let q = validate_rate(config.pruning_rate)?;
    if shape.is_empty() {
        return Err(EvsError::invalid("random mask over an empty grid"));
    }
    let n = shape.prunable();
    let k = kept_count(q, n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut keep = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, k) {
        keep[i] = true;
    }
    let offset = shape.tokens_per_frame();
    Ok(RetentionMask::from_fn(shape, q, SelectorTag::Random, |i| {
        keep[i - offset]
    }))
}

/// Frame indices kept by uniform-stride subsampling: `ceil((1 - q) * T)` frames
/// at `round(i * (T - 1) / (k - 1))`, always including frame 0.
pub fn subsample_frames(frames: usize, q: f64) -> Result<Vec<usize>> {
    validate_rate(q)?;
    if frames == 0 {
        return Err(EvsError::invalid("cannot subsample a clip with no frames"));
    }
    let k = ceil_count(1.0 - q, frames).max(1);
    if k == 1 {
        return Ok(vec![0]);
    }
    let span = frames - 1;
    let steps = k - 1;
    // half-up rounding in integers
    Ok((0..k)
        .map(|i| (2 * i * span + steps) / (2 * steps))
        .collect())
}

pub fn subsample_mask(shape: GridShape, q: f64) -> Result<RetentionMask> {
    let kept = subsample_frames(shape.frames, q)?;
    let mut frame_kept = vec![false; shape.frames];
    for t in kept {
        frame_kept[t] = true;
    }
    let per_frame = shape.tokens_per_frame();
    Ok(RetentionMask::from_fn(
        shape,
        q,
        SelectorTag::Subsample,
        |i| frame_kept[i / per_frame],
    ))
}
