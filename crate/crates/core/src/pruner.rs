//! Gathers retained tokens and assigns position IDs.

use crate::error::{EvsError, Result};
use crate::mask::RetentionMask;
use crate::scalar::Scalar;
use crate::stream::{PositionMode, TokenEntry, TokenStream};
use crate::tensor::EmbeddingGrid;

/// Applies `mask` to `grid` (or to bare sites when `grid` is `None`).
///
/// Retained entries follow canonical order. In preserving mode each entry keeps
/// its flat index in the unpruned grid as position ID; in sequential mode IDs
/// run `0..K`. Payloads are copied verbatim.
pub fn gather_tokens<S: Scalar>(
    grid: Option<&EmbeddingGrid<S>>,
    mask: &RetentionMask,
    mode: PositionMode,
) -> Result<TokenStream<S>> {
    let shape = mask.shape();
    if let Some(g) = grid {
        if g.shape() != shape {
            return Err(EvsError::invalid(format!(
                "mask grid {}x{}x{} does not match embeddings {}x{}x{}",
                shape.frames,
                shape.height,
                shape.width,
                g.shape().frames,
                g.shape().height,
                g.shape().width
            )));
        }
    }
    if shape.len() > u32::MAX as usize {
        return Err(EvsError::invalid("grid too large for 32-bit position ids"));
    }
    let channels = grid.map_or(0, |g| g.channels());
    let entries = mask
        .kept_indices()
        .enumerate()
        .map(|(k, idx)| TokenEntry {
            position_id: match mode {
                PositionMode::Preserving => idx as u32,
                PositionMode::Sequential => k as u32,
            },
            site: shape.site(idx),
            payload: grid.map_or_else(Vec::new, |g| g.feature(idx).to_vec()),
        })
        .collect();
    Ok(TokenStream::from_parts_unchecked(
        shape, channels, mode, entries,
    ))
}
