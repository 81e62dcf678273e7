//! The behavior-augmented relevance scorer.
//!
//! Two symmetric towers score the same query-item pair. The query-side tower
//! fuses the query's behavior neighbors (QBN) into its representation through
//! neighbor-level co-attention (NCA) over pooled vectors and token-level
//! co-attention (TCA) over token matrices, then feeds
//! `[target, NCA, TCA, counterpart]` through a small feed-forward head; the
//! item-side tower mirrors this with IBN. Each component can be ablated
//! independently. Two micro baselines (a cosine two-tower and a concatenating
//! cross-encoder) and the routing variant that falls back to the two-tower
//! scorer on neighborless pairs live here as well.

pub mod config;
pub mod forward;
pub mod fuse;
pub mod init;

#[cfg(test)]
mod tests;

pub use config::{BaselineKind, ModelConfig, ScoreCombiner};
pub use forward::{
    forward_baseline, forward_baseline_traced, forward_pair, forward_score, forward_score_plus,
    PairExample, PairForward, RelevanceScore, TowerIntermediates,
};
pub use fuse::{nca_fuse, tca_fuse};
pub use init::{init_baseline_params, init_params, param_count, baseline_param_count};
