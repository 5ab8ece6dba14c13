//! Attention-memory formulas and a linear time-to-first-token model.
//!
//! Memory in MiB:
//!
//! ```text
//! M_kv = S (B + Q) D_kv s_kv / 2^20
//! M    = (S (B + Q) D_kv s_kv + delta S d_model s_w + P s_w) / 2^20
//! ```
//!
//! Byte totals are computed exactly in integers; only the final MiB value is
//! converted to the caller's scalar type.

mod calibration;

pub use calibration::{
    fit_ttft_model, read_calibration, speedup_report, write_calibration, Calibration, LatencyRow,
    LatencyTable, SpeedupReport, SpeedupRow, TtftColumn,
};

use serde::{Deserialize, Serialize};

use crate::budget::{kept_count, validate_rate};
use crate::error::{EvsError, Result};
use crate::scalar::Scalar;

const MIB: u128 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KVCacheSpec {
    /// Effective sequence length `S` in tokens.
    pub seq_len: u64,
    pub batch: u64,
    pub prefill_queue: u64,
    /// KV scalars stored per token, across all layers.
    pub kv_dim_per_token: u64,
    pub kv_elem_bytes: u8,
    pub weight_elem_bytes: u8,
    pub model_dim: u64,
    /// Attention parameter count `P`.
    pub attn_params: u64,
    /// Whether a query buffer of `S x d_model` is held during prefill.
    pub query_prefill: bool,
}

impl KVCacheSpec {
    pub fn validate(&self) -> Result<()> {
        for (b, what) in [
            (self.kv_elem_bytes, "kv element"),
            (self.weight_elem_bytes, "weight element"),
        ] {
            if ![1, 2, 4, 8].contains(&b) {
                return Err(EvsError::invalid(format!(
                    "{what} size must be 1, 2, 4 or 8 bytes, got {b}"
                )));
            }
        }
        Ok(())
    }

    pub fn with_seq_len(mut self, seq_len: u64) -> Self {
        self.seq_len = seq_len;
        self
    }

    pub fn kv_cache_bytes(&self) -> u128 {
        u128::from(self.seq_len)
            * (u128::from(self.batch) + u128::from(self.prefill_queue))
            * u128::from(self.kv_dim_per_token)
            * u128::from(self.kv_elem_bytes)
    }

    pub fn total_attention_bytes(&self) -> u128 {
        let query = if self.query_prefill {
            u128::from(self.seq_len)
                * u128::from(self.model_dim)
                * u128::from(self.weight_elem_bytes)
        } else {
            0
        };
        self.kv_cache_bytes()
            + query
            + u128::from(self.attn_params) * u128::from(self.weight_elem_bytes)
    }
}

// One rounding (integer to float), then an exact power-of-two division; scaling
// the byte count by a power of two therefore scales the result exactly.
fn mib<S: Scalar>(bytes: u128) -> S {
    S::from(bytes).unwrap_or_else(S::infinity) / S::from(MIB).unwrap_or_else(S::one)
}

/// KV-cache memory `M_kv` in MiB.
pub fn kv_cache_memory<S: Scalar>(spec: &KVCacheSpec) -> Result<S> {
    spec.validate()?;
    Ok(mib(spec.kv_cache_bytes()))
}

/// Total attention memory `M` in MiB, including query buffer and weights.
pub fn total_attention_memory<S: Scalar>(spec: &KVCacheSpec) -> Result<S> {
    spec.validate()?;
    Ok(mib(spec.total_attention_bytes()))
}

/// Sequence length after pruning the vision part at rate `q`:
/// `round((1 - q) * vision) + text`.
pub fn pruned_seq_len(total_vision_tokens: usize, q: f64, text_tokens: usize) -> Result<usize> {
    validate_rate(q)?;
    Ok(kept_count(q, total_vision_tokens) + text_tokens)
}

/// Ordinary least-squares line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit<S = f64> {
    pub intercept: S,
    pub slope: S,
    pub r_squared: S,
}

impl<S: Scalar> LinearFit<S> {
    pub fn predict(&self, x: S) -> S {
        self.intercept + self.slope * x
    }
}

pub fn fit_line<S: Scalar>(xs: &[S], ys: &[S]) -> Result<LinearFit<S>> {
    if xs.len() != ys.len() {
        return Err(EvsError::invalid("x and y series differ in length"));
    }
    if xs.len() < 3 {
        return Err(EvsError::InsufficientData(format!(
            "a line fit needs at least 3 points, got {}",
            xs.len()
        )));
    }
    let n = S::from_usize_lossy(xs.len());
    let mean_x = xs.iter().copied().sum::<S>() / n;
    let mean_y = ys.iter().copied().sum::<S>() / n;
    let (mut sxx, mut sxy, mut syy) = (S::zero(), S::zero(), S::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx = sxx + dx * dx;
        sxy = sxy + dx * dy;
        syy = syy + dy * dy;
    }
    if sxx == S::zero() {
        return Err(EvsError::InsufficientData(
            "x values are all identical".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum::<S>();
    let r_squared = if syy == S::zero() {
        S::one()
    } else {
        S::one() - ss_res / syy
    };
    Ok(LinearFit {
        intercept,
        slope,
        r_squared,
    })
}
