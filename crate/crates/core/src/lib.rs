//! Multi-modal, multi-task self-supervised representation learning over
//! precomputed per-modality feature vectors.
//!
//! The crate is organized bottom-up:
//!
//! - [`numeric`]: tensors, reverse-mode gradients for MLP stacks, AdamW and
//!   the warm-restart cosine schedule.
//! - [`data`]: the on-disk feature store, batching and a synthetic generator.
//! - [`heads`]: representation, projection, clustering, decoder and
//!   classifier heads.
//! - [`losses`]: InfoNCE, masked margin softmax, reconstruction, clustering
//!   and their multi-task sums.
//! - [`clustering`]: modality fusion, online K-means and the batch queue.
//! - [`trainer`]: pretraining, downstream protocols and checkpoints.
//! - [`eval`]: weighted single- and multi-label metrics and reports.
//!
//! Inner loops go through [`exec`], which uses rayon when the `parallel`
//! feature is enabled and falls back to plain iteration otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod error;
pub mod eval;
pub mod exec;
pub mod heads;
pub mod losses;
pub mod data;
pub mod numeric;
mod seeds;
pub mod trainer;

pub use error::{Error, Result};
