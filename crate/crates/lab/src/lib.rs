//! Training, copy-synthesis, and evaluation tooling around `prls-core`:
//! WAV input and output, a synthetic harmonic corpus, TOML run
//! configurations, checkpoints, and the alternating GAN trainer.

// `!(x > 0.0)` is used on purpose: unlike `x <= 0.0` it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod synth;
pub mod trainer;
pub mod wav;

pub use config::RunConfig;
pub use error::{Error, Result};
