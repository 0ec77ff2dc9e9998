//! Encoder-decoder transformer for next-basket category recommendation.
//!
//! The crate is organized bottom-up:
//!
//! - [`numeric`]: matrices, the gradient tape, Adam and gradient clipping.
//! - [`data`]: vocabularies, customer histories, JSONL I/O, splits and the
//!   synthetic generator.
//! - [`sampler`]: pivot sampling and encoder/decoder sequence construction.
//! - [`model`]: embeddings, attention blocks and the cross-entropy objective.
//! - [`trainer`]: teacher-forced training with early stopping and checkpoints.
//! - [`evalkit`]: basket generation, the personal top-frequency baseline and
//!   ranking metrics.

pub mod error;
pub mod data;
pub mod numeric;
pub mod sampler;
pub mod model;
pub mod trainer;
pub mod evalkit;

pub use error::{Error, Result};
