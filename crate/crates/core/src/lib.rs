//! Numeric column embeddings from a pooled one-dimensional Gaussian mixture.
//!
//! Every numeric column of a corpus contributes its values to one pooled
//! stack, a mixture is fitted to that stack by EM, and each column is then
//! described by its mean component responsibilities together with a handful
//! of standardized summary statistics. Header vectors can be composed on top.
//! The crate also ships the usual numeric baselines (piecewise-linear
//! encoding, periodic activation features, KS fingerprints, squashed-value
//! mixtures) and a precision@k / clustering evaluation harness.

// `!(x > 0.0)` is used on purpose so that NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod column_store;
pub mod context;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod par;
pub mod signature;
pub mod synth;

pub use column_store::{load_corpus, load_ground_truth, ColumnId, Corpus, GroundTruth, NumericColumn};
pub use embedding::{embed_corpus, ComposedEmbedding, EmbedOptions, EmbeddingSet, HeaderSource, Mode};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalOptions, EvalReport, KPolicy};
pub use gmm::{fit, FitConfig, GmmModel};
pub use signature::{compute_signatures, SignatureVector};
