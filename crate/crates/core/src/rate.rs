//! Stochastic pruning rates drawn from a Beta distribution given by its mode.
//!
//! `Beta(alpha, beta)` with `alpha = m (k - 2) + 1` and `beta = (1 - m)(k - 2) + 1`
//! has its mode exactly at `m` for any concentration `k > 2`. Draws use the
//! two-Gamma ratio `X / (X + Y)`, `X ~ Gamma(alpha)`, `Y ~ Gamma(beta)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{EvsError, Result};

/// Concentration used when only a mode is given.
pub const DEFAULT_CONCENTRATION: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaRateSpec {
    mode_target: f64,
    concentration: f64,
}

impl BetaRateSpec {
    pub fn new(mode_target: f64, concentration: f64) -> Result<Self> {
        if !(mode_target > 0.0 && mode_target < 1.0) {
            return Err(EvsError::invalid(format!(
                "mode target must lie in (0, 1), got {mode_target}"
            )));
        }
        if !(concentration.is_finite() && concentration > 2.0) {
            return Err(EvsError::invalid(format!(
                "concentration must exceed 2, got {concentration}"
            )));
        }
        Ok(Self {
            mode_target,
            concentration,
        })
    }

    pub fn mode_target(&self) -> f64 {
        self.mode_target
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn alpha(&self) -> f64 {
        self.mode_target * (self.concentration - 2.0) + 1.0
    }

    pub fn beta(&self) -> f64 {
        (1.0 - self.mode_target) * (self.concentration - 2.0) + 1.0
    }

    pub fn mean(&self) -> f64 {
        self.alpha() / (self.alpha() + self.beta())
    }

    pub fn mode(&self) -> f64 {
        (self.alpha() - 1.0) / (self.alpha() + self.beta() - 2.0)
    }
}

/// Seeded Beta sampler. One instance owns one random stream.
#[derive(Debug, Clone)]
pub struct RateSampler {
    spec: BetaRateSpec,
    numerator: Gamma<f64>,
    denominator: Gamma<f64>,
    rng: ChaCha8Rng,
}

impl RateSampler {
    pub fn new(spec: BetaRateSpec, seed: u64) -> Result<Self> {
        let gamma = |shape: f64| {
            Gamma::new(shape, 1.0)
                .map_err(|e| EvsError::invalid(format!("gamma shape {shape}: {e}")))
        };
        Ok(Self {
            spec,
            numerator: gamma(spec.alpha())?,
            denominator: gamma(spec.beta())?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn spec(&self) -> &BetaRateSpec {
        &self.spec
    }

    /// One draw, strictly inside `(0, 1)`.
    pub fn sample(&mut self) -> f64 {
        loop {
            let x = self.numerator.sample(&mut self.rng);
            let y = self.denominator.sample(&mut self.rng);
            let q = x / (x + y);
            if q > 0.0 && q < 1.0 {
                return q;
            }
        }
    }

    pub fn sample_n(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample()).collect()
    }

    /// Uniform draw from the same stream; used to derive per-batch seeds.
    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }
}

/// Convenience wrapper: one draw from a fresh seeded stream.
pub fn sample_rate(spec: &BetaRateSpec, seed: u64) -> Result<f64> {
    Ok(RateSampler::new(*spec, seed)?.sample())
}

/// Summary of a batch of draws.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSummary {
    pub n: usize,
    pub mean: f64,
    /// Centre of the fullest bin of a `bins`-bin histogram over `[0, 1)`.
    pub histogram_mode: f64,
    pub bins: usize,
}

pub fn summarize(draws: &[f64], bins: usize) -> Result<RateSummary> {
    if draws.is_empty() || bins == 0 {
        return Err(EvsError::InsufficientData("no draws to summarize".into()));
    }
    let mut counts = vec![0usize; bins];
    for &q in draws {
        let b = ((q * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    // first fullest bin wins ties
    let (best, _) = counts
        .iter()
        .enumerate()
        .fold((0, 0), |acc, (i, &c)| if c > acc.1 { (i, c) } else { acc });
    Ok(RateSummary {
        n: draws.len(),
        mean: draws.iter().sum::<f64>() / draws.len() as f64,
        histogram_mode: (best as f64 + 0.5) / bins as f64,
        bins,
    })
}
