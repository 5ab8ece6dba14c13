//! Size-targeted greedy merging of similar tokens.
//!
//! Each round splits the current tokens alternately (by canonical order) into
//! sets A and B, matches every A token to its most cosine-similar B token, and
//! folds the `r` best-matched A tokens into their partners. Merged payloads are
//! multiplicity-weighted means, so the weighted payload sum never changes.

use super::matched_budget;
use crate::budget::{kept_count, validate_rate};
use crate::error::{EvsError, Result};
use crate::scalar::Scalar;
use crate::stream::{PositionMode, TokenEntry, TokenStream};
use crate::tensor::EmbeddingGrid;

struct Group<S> {
    /// Earliest canonical index among merged members.
    index: usize,
    payload: Vec<S>,
    weight: usize,
}

fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    let (mut dot, mut na, mut nb) = (S::zero(), S::zero(), S::zero());
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    if na == S::zero() || nb == S::zero() {
        return S::zero();
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Merges tokens until `round((1 - q) * N)` remain.
pub fn merge_tokens<S: Scalar>(
    grid: &EmbeddingGrid<S>,
    q: f64,
    mode: PositionMode,
) -> Result<TokenStream<S>> {
    merge_tokens_weighted(grid, q, mode).map(|(stream, _)| stream)
}

/// Like [`merge_tokens`], also returning how many source tokens each output entry absorbed.
pub fn merge_tokens_weighted<S: Scalar>(
    grid: &EmbeddingGrid<S>,
    q: f64,
    mode: PositionMode,
) -> Result<(TokenStream<S>, Vec<usize>)> {
    let q = validate_rate(q)?;
    merge_to_count(grid, kept_count(q, grid.shape().len()), mode)
}

/// Merges tokens down to the retained total of an exact-budget EVS mask at rate
/// `q`: one full frame plus `round((1 - q) * (T - 1) * H' * W')`.
pub fn merge_tokens_matched<S: Scalar>(
    grid: &EmbeddingGrid<S>,
    q: f64,
    mode: PositionMode,
) -> Result<(TokenStream<S>, Vec<usize>)> {
    merge_to_count(grid, matched_budget(grid.shape(), q)?, mode)
}

/// Merges tokens until exactly `target` remain.
pub fn merge_to_count<S: Scalar>(
    grid: &EmbeddingGrid<S>,
    target: usize,
    mode: PositionMode,
) -> Result<(TokenStream<S>, Vec<usize>)> {
    let shape = grid.shape();
    let n = shape.len();
    if target < 1 {
        return Err(EvsError::invalid("merging must leave at least one token"));
    }
    if target > n {
        return Err(EvsError::invalid(format!(
            "cannot merge {n} tokens up to {target}"
        )));
    }
    let mut groups: Vec<Group<S>> = (0..n)
        .map(|i| Group {
            index: i,
            payload: grid.feature(i).to_vec(),
            weight: 1,
        })
        .collect();

    while groups.len() > target {
        let to_remove = groups.len() - target;
        let a_idx: Vec<usize> = (0..groups.len()).step_by(2).collect();
        let b_idx: Vec<usize> = (1..groups.len()).step_by(2).collect();

        // (similarity, position in groups of A, position in groups of best B)
        let mut matches: Vec<(S, usize, usize)> = a_idx
            .iter()
            .map(|&a| {
                let mut best = b_idx[0];
                let mut best_sim = cosine(&groups[a].payload, &groups[best].payload);
                for &b in &b_idx[1..] {
                    let s = cosine(&groups[a].payload, &groups[b].payload);
                    if s > best_sim {
                        best = b;
                        best_sim = s;
                    }
                }
                (best_sim, a, best)
            })
            .collect();
        matches.sort_by(|x, y| {
            y.0.partial_cmp(&x.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(x.1.cmp(&y.1))
        });
        let r = a_idx.len().min(to_remove);
        let mut chosen: Vec<(usize, usize)> = matches[..r].iter().map(|m| (m.1, m.2)).collect();
        chosen.sort_unstable();

        let channels = grid.channels();
        let mut sums: Vec<Option<(Vec<S>, usize, usize)>> =
            (0..groups.len()).map(|_| None).collect();
        let mut absorbed = vec![false; groups.len()];
        for &(a, b) in &chosen {
            absorbed[a] = true;
            let entry = sums[b].get_or_insert_with(|| {
                let g = &groups[b];
                let w = S::from_usize_lossy(g.weight);
                (
                    g.payload.iter().map(|v| *v * w).collect(),
                    g.weight,
                    g.index,
                )
            });
            let g = &groups[a];
            let w = S::from_usize_lossy(g.weight);
            for c in 0..channels {
                entry.0[c] = entry.0[c] + g.payload[c] * w;
            }
            entry.1 += g.weight;
            entry.2 = entry.2.min(g.index);
        }

        let mut next = Vec::with_capacity(groups.len() - r);
        for (pos, g) in groups.into_iter().enumerate() {
            if absorbed[pos] {
                continue;
            }
            match sums[pos].take() {
                Some((sum, weight, index)) => {
                    let w = S::from_usize_lossy(weight);
                    next.push(Group {
                        index,
                        payload: sum.into_iter().map(|v| v / w).collect(),
                        weight,
                    });
                }
                None => next.push(g),
            }
        }
        next.sort_by_key(|g| g.index);
        groups = next;
    }

    let weights = groups.iter().map(|g| g.weight).collect();
    let entries = groups
        .into_iter()
        .enumerate()
        .map(|(k, g)| TokenEntry {
            position_id: match mode {
                PositionMode::Preserving => g.index as u32,
                PositionMode::Sequential => k as u32,
            },
            site: shape.site(g.index),
            payload: g.payload,
        })
        .collect();
    let stream = TokenStream::new(shape, grid.channels(), mode, entries)?;
    Ok((stream, weights))
}
