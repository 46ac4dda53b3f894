//! Spectral analysis shared by the losses, the data pipeline, and the metrics.
//!
//! [`stft_magnitude`] (and its tape counterpart
//! [`Tape::stft_magnitude`](crate::Tape::stft_magnitude)) is differentiable;
//! mel spectrograms, cepstra, and f0 tracks are plain feature extraction.

pub mod cepstrum;
pub mod mel;
pub mod pitch;
pub mod stft;

pub use cepstrum::{dct2_ortho, idct2_ortho, mel_cepstra};
pub use mel::{mel_spectrogram, MelConfig, MelFilterbank, LOG_MEL_FLOOR};
pub use pitch::{estimate_f0, F0Config, F0Track};
pub use stft::{stft_magnitude, PadMode, StftConfig, StftPlan};
