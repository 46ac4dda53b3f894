//! Dense tensors with tape-based reverse-mode differentiation, spectral
//! analysis, and the adversarial and auxiliary losses used to train
//! MelGAN- and Parallel-WaveGAN-style vocoders with pointwise relativistic
//! least-squares objectives.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the training
//! loop, and the command line live in the `prls-lab` companion crate.
//!
//! # Layout
//!
//! - [`tensor`]: the [`Tensor`] value type and the [`Real`] element trait.
//! - [`tape`]: the recording [`Tape`], its differentiable ops, and `backward`.
//! - [`fft`], [`dsp`]: STFT magnitude, mel filterbanks, cepstra, f0 tracking.
//! - [`losses`]: LSGAN, multi-resolution STFT, and the pointwise relativistic
//!   and top-K objectives.
//! - [`models`]: desk-scale generators and discriminators.
//! - [`optim`]: Adam, RAdam, global-norm clipping, learning-rate schedules.
//! - [`metrics`]: mel-cepstral distortion and f0 frame error.
//! - [`gradcheck`]: central-difference gradient verification.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is used on purpose: unlike `x <= 0.0` it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dsp;
pub mod error;
pub mod fft;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{DType, Real, Tensor};
