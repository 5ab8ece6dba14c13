//! Pruning-rate validation and token-budget arithmetic.
//!
//! Products like `(1 - q) * n` are snapped to the nearest half-integer when they
//! land within floating-point noise of one, so that decimal rates such as 0.9
//! round the same way the exact decimal product would.

use crate::error::{EvsError, Result};

const SNAP_EPS: f64 = 1e-9;

/// Checks `0 <= q < 1`.
pub fn validate_rate(q: f64) -> Result<f64> {
    if q.is_finite() && (0.0..1.0).contains(&q) {
        Ok(q)
    } else {
        Err(EvsError::invalid(format!(
            "pruning rate must lie in [0, 1), got {q}"
        )))
    }
}

fn snapped_product(fraction: f64, n: usize) -> f64 {
    let x = fraction * n as f64;
    let half = (x * 2.0).round() / 2.0;
    if (x - half).abs() <= SNAP_EPS * (n as f64).max(1.0) {
        half
    } else {
        x
    }
}

/// `round((1 - q) * n)`, halves rounded up.
pub fn kept_count(q: f64, n: usize) -> usize {
    let x = snapped_product(1.0 - q, n);
    (x.round() as usize).min(n)
}

/// `ceil(fraction * n)`.
pub fn ceil_count(fraction: f64, n: usize) -> usize {
    let x = snapped_product(fraction, n);
    (x.ceil() as usize).min(n)
}
