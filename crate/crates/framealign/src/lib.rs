//! Frame-level audio-text alignment toolkit.
//!
//! This crate implements the full pipeline for working with temporally-strong
//! audio captions: free-text descriptions bound to onset/offset regions of an
//! audio clip. It covers:
//!
//! - a dataset model for strongly-annotated clips (manifest I/O, interval
//!   merging, coverage and caption statistics, stratified splits),
//! - an audio preprocessing chain (peak normalization, silence trimming,
//!   band-limited resampling, highest-energy segment selection, edge fades)
//!   plus a log-mel frontend,
//! - small trainable dual encoders with hand-derived gradients that map audio
//!   to a sequence of L2-normalized frame embeddings and text to a single
//!   L2-normalized vector,
//! - the frame-wise contrastive loss that aligns annotated regions with the
//!   frames they span, and a symmetric global contrastive loss for weak
//!   (clip-level) captions,
//! - an Adam training loop with linear warmup and cosine annealing,
//! - text-based sound event detection evaluation: cosine score tracks,
//!   segment-level pAUROC, event-level PSDS, and text-to-audio retrieval
//!   metrics,
//! - caption cleanup tooling behind a mockable completion client, and a
//!   deterministic synthetic benchmark generator.
//!
//! The `framealign` binary exposes all of this as subcommands; see the
//! crate-level README for usage.

// Validation keeps the `!(x > 0.0)` form: unlike `x <= 0.0`, it also
// rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// The numerics use explicit index loops; ranges over several slices at
// once read better than zipped iterator chains here.
#![allow(clippy::needless_range_loop)]

pub mod audio;
pub mod caption;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod loss;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
