use rayon::prelude::*;

use super::{build_mask, DiffField, PruningConfig, Selector};
use crate::error::{EvsError, Result};
use crate::mask::RetentionMask;
use crate::scalar::Scalar;
use crate::tensor::EmbeddingGrid;

/// Cosine dissimilarity `1 - cos(e_t, e_{t-1})` per site, clamped to `[0, 2]`.
///
/// A zero-norm vector on either side counts as similarity 0, i.e. a diff of 1.
pub fn compute_embedding_diffs<S: Scalar>(grid: &EmbeddingGrid<S>) -> Result<DiffField<S>> {
    let shape = grid.shape();
    let per_frame = shape.tokens_per_frame();
    let values: Vec<S> = (per_frame..shape.len())
        .into_par_iter()
        .map(|i| cosine_dissimilarity(grid.feature(i), grid.feature(i - per_frame)))
        .collect();
    DiffField::new(shape, values)
}

#[inline]
fn cosine_dissimilarity<S: Scalar>(a: &[S], b: &[S]) -> S {
    let (mut dot, mut na, mut nb) = (S::zero(), S::zero(), S::zero());
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    let two = S::one() + S::one();
    if na == S::zero() || nb == S::zero() {
        return S::one();
    }
    let cos = dot / (na.sqrt() * nb.sqrt());
    (S::one() - cos).max(S::zero()).min(two)
}

/// Embedding-space retention mask: cosine diffs, then [`build_mask`].
pub fn build_mask_embedding<S: Scalar>(
    grid: &EmbeddingGrid<S>,
    config: &PruningConfig,
) -> Result<RetentionMask> {
    if config.selector != Selector::Embedding {
        return Err(EvsError::invalid(
            "embedding masks need the embedding selector",
        ));
    }
    build_mask(&compute_embedding_diffs(grid)?, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridShape;
    use crate::select::ThresholdMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, shape: GridShape, c: usize) -> EmbeddingGrid<f64> {
        let data = (0..shape.len() * c)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        EmbeddingGrid::new(shape, c, data).unwrap()
    }

    #[test]
    fn identical_and_antipodal() {
        let shape = GridShape::new(2, 1, 2);
        let data = vec![3.0, 4.0, 0.0, 2.0, 3.0, 4.0, 0.0, -2.0];
        let g = EmbeddingGrid::new(shape, 2, data).unwrap();
        let d = compute_embedding_diffs(&g).unwrap();
        assert_eq!(d.values(), &[0.0, 2.0]);
    }

    #[test]
    fn zero_vector_is_diff_one() {
        let shape = GridShape::new(2, 1, 1);
        let g = EmbeddingGrid::new(shape, 3, vec![0.0f32, 0.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(compute_embedding_diffs(&g).unwrap().values(), &[1.0]);
    }

    #[test]
    fn matches_scalar_dot_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_grid(&mut rng, GridShape::new(2, 2, 2), 8);
        let d = compute_embedding_diffs(&g).unwrap();
        for site in 0..4 {
            let (a, b) = (g.feature(site + 4), g.feature(site));
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for k in 0..8 {
                dot += a[k] * b[k];
                na += a[k] * a[k];
                nb += b[k] * b[k];
            }
            let expected = (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0);
            assert_eq!(d.values()[site], expected);
        }
    }

    #[test]
    fn rotated_site_is_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = GridShape::new(2, 2, 2);
        let base = random_grid(&mut rng, GridShape::new(1, 2, 2), 4).into_data();
        let mut data = base.clone();
        let mut next = base.clone();
        // rotate site 2 by 90 degrees in its first two components
        let (x, y) = (next[8], next[9]);
        next[8] = -y;
        next[9] = x;
        data.extend(next);
        let g = EmbeddingGrid::new(shape, 4, data).unwrap();
        let cfg = PruningConfig::embedding(0.5, ThresholdMode::ExactBudget).unwrap();
        let m = build_mask_embedding(&g, &cfg).unwrap();
        assert!(m.is_kept(6));
        assert_eq!(m.kept_count(), 6);
    }

    #[test]
    fn constant_grid_budget() {
        let g = EmbeddingGrid::new(GridShape::new(2, 2, 2), 3, vec![0.5f32; 24]).unwrap();
        let cfg = PruningConfig::embedding(0.75, ThresholdMode::ExactBudget).unwrap();
        assert_eq!(build_mask_embedding(&g, &cfg).unwrap().kept_count(), 5);
        let cfg = PruningConfig::embedding(0.0, ThresholdMode::ExactBudget).unwrap();
        assert_eq!(build_mask_embedding(&g, &cfg).unwrap().kept_count(), 8);
    }

    #[test]
    fn scaling_by_powers_of_two_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = random_grid(&mut rng, GridShape::new(4, 3, 3), 6);
        let scaled: Vec<f64> = g
            .data()
            .chunks(6)
            .enumerate()
            .flat_map(|(i, v)| {
                let s = f64::powi(2.0, (i % 7) as i32 - 3);
                v.iter().map(move |x| x * s).collect::<Vec<_>>()
            })
            .collect();
        let g2 = EmbeddingGrid::new(g.shape(), 6, scaled).unwrap();
        assert_eq!(
            compute_embedding_diffs(&g).unwrap(),
            compute_embedding_diffs(&g2).unwrap()
        );
    }
}
