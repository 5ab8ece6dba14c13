//! Temporal-redundancy pruning of video vision tokens.
//!
//! The crate computes retention masks over a `T x H' x W'` token grid, either
//! from raw pixels ([`select::compute_rgb_diffs`]) or from encoder features
//! ([`select::compute_embedding_diffs`]), gathers the surviving tokens with
//! position-preserving or sequential IDs ([`pruner::gather_tokens`]), and ships
//! baselines, a stochastic rate sampler and a latency/memory cost model.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod baselines;
pub mod budget;
pub mod cost;
pub mod error;
pub mod geometry;
pub mod io;
pub mod mask;
pub mod pruner;
pub mod rate;
pub mod scalar;
pub mod select;
pub mod stream;
pub mod tensor;
pub mod viz;

pub use error::{EvsError, Result};
pub use geometry::{effective_patch_size, flat_index, GridShape, PatchGeometry, TokenSite};
pub use mask::{stream_stats, RetentionMask, RetentionReport, SelectorTag};
pub use pruner::gather_tokens;
pub use scalar::Scalar;
pub use select::{
    build_mask, build_mask_embedding, build_mask_rgb, compute_embedding_diffs, compute_rgb_diffs,
    percentile_threshold, DiffField, PruningConfig, Selector, ThresholdMode,
};
pub use stream::{PositionMode, TokenEntry, TokenStream};
pub use tensor::{EmbeddingGrid, PixelData, VideoClip};

pub type DiffField32 = DiffField<f32>;
pub type DiffField64 = DiffField<f64>;
pub type EmbeddingGrid32 = EmbeddingGrid<f32>;
pub type EmbeddingGrid64 = EmbeddingGrid<f64>;
pub type TokenStream32 = TokenStream<f32>;
pub type TokenStream64 = TokenStream<f64>;
pub type LinearFit64 = cost::LinearFit<f64>;
