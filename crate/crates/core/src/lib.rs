//! Human/machine email classification at message level.
//!
//! The library is organized as a pipeline of small, independently testable
//! pieces:
//!
//! - [`nn`]: a minimal fixed-layer neural network kernel (embeddings,
//!   temporal convolution blocks, batch norm, dense layers, dropout,
//!   softmax cross-entropy, Adam) with exact reverse-mode gradients.
//! - [`text`]: tokenization, letter-trigram extraction, vocabulary
//!   construction (frequency + chi-square) and fixed-length index encoding.
//! - [`labels`]: weak label generation from recipient open/delete behavior
//!   and from explicit salutations at the start of the body.
//! - [`models`]: the four sub-model architectures (content, sender, action,
//!   salutation), score rectification, and the frozen-sub-model fusion that
//!   forms the full classifier.
//! - [`eval`]: oversampling-adjusted precision/recall, recall-at-precision
//!   threshold sweeps, stratified sampling, and a population simulator used
//!   as the metrics oracle.
//! - [`corpus`]: the line-delimited message format, a synthetic corpus
//!   generator, and dedup/volume-cap sampling rules.
//! - [`pipeline`]: training-set assembly, training orchestration, batch
//!   inference and evaluation, as driven by the CLI.
//!
//! Batch-level work (training math, batch scoring, resampling) runs on rayon
//! when the default `parallel` feature is enabled and falls back to plain
//! sequential iteration without it. Both paths produce bit-identical results:
//! every parallel loop writes disjoint outputs and performs its reductions in
//! a fixed order.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod labels;
pub mod models;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod text;
pub mod train;

pub use error::{Error, Result};
