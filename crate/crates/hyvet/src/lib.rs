//! Fake-news detection on attributed user/news hypergraphs.
//!
//! News items are modelled as hyperedges over the users who spread them.
//! The pipeline couples a hypergraph autoencoder over user attributes (the
//! credibility channel) with hashed n-gram embeddings of the news text (the
//! semantic channel), pulls the two views together with a contrastive
//! mutual-information objective, and classifies every hyperedge as real or
//! fake with a small fully-connected head.
//!
//! Layer map, bottom up:
//!
//! - [`tensor`], [`autodiff`], [`optim`] — dense 2-D tensors, the
//!   reverse-mode differentiation tape, and Adam.
//! - [`hypergraph`] — incidence structure, degree vectors, the normalized
//!   propagation operator and the co-participation projection.
//! - [`embed`] — deterministic hashed n-gram text embeddings plus a loader
//!   for precomputed embedding tables.
//! - [`model`] — parameters, the encoder/decoder/classifier forward pass
//!   and checkpointing.
//! - [`train`] — splits, the epoch loop, k-fold cross-validation.
//! - [`data`], [`synth`] — dataset files, manifests, time windowing and the
//!   planted synthetic generator.
//! - [`eval`], [`stats`] — metrics, paired t-test, ablations, case-study
//!   statistics and embedding export.
//! - [`config`], [`cli`] — key=value run configuration and the `hyvet`
//!   command-line interface built on it.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod embed;
pub mod eval;
pub mod hypergraph;
pub mod model;
pub mod optim;
pub mod seeding;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{AutodiffError, Tape, ValueId};
pub use hypergraph::{Hypergraph, HypergraphError, Incidence, PropagationOperator};
pub use tensor::Tensor;
