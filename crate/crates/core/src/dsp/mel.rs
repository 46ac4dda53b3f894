//! HTK-scale triangular mel filterbanks and log-mel spectrograms.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::stft::{PadMode, StftConfig};
use crate::error::{invalid, Result};
use crate::tensor::{Real, Tensor};

/// Floor applied before the natural log of mel energies.
pub const LOG_MEL_FLOOR: f64 = 1e-5;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * Float::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (Float::powf(10.0, mel / 2595.0) - 1.0)
}

/// Conditioning-feature parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub stft: StftConfig,
}

impl MelConfig {
    /// 80 bands over 0-11025 Hz from a 1024-point transform with hop 256.
    pub fn with_padding(padding: PadMode) -> Self {
        Self {
            sample_rate: 22050,
            n_mels: 80,
            fmin: 0.0,
            fmax: 11025.0,
            stft: StftConfig {
                fft_size: 1024,
                win_length: 1024,
                hop: 256,
                padding,
            },
        }
    }
}

impl Default for MelConfig {
    fn default() -> Self {
        Self::with_padding(PadMode::Center)
    }
}

/// `[n_mels, fft_size / 2 + 1]` triangular weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank<T> {
    pub n_mels: usize,
    pub sample_rate: u32,
    pub fmin: f64,
    pub fmax: f64,
    pub weights: Tensor<T>,
}

impl<T: Real> MelFilterbank<T> {
    pub fn new(n_mels: usize, fft_size: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if n_mels == 0 || !(0.0..fmax).contains(&fmin) || fmax > nyquist {
            return Err(invalid(
                "mel_filterbank",
                format!("need n_mels > 0 and 0 <= fmin < fmax <= {nyquist}, got {n_mels}, {fmin}, {fmax}"),
            ));
        }
        let bins = fft_size / 2 + 1;
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut w = vec![T::zero(); n_mels * bins];
        for m in 0..n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * sample_rate as f64 / fft_size as f64;
                let v = if f > left && f <= center {
                    (f - left) / (center - left)
                } else if f > center && f < right {
                    (right - f) / (right - center)
                } else {
                    0.0
                };
                w[m * bins + k] = T::of(v);
            }
        }
        Ok(Self {
            n_mels,
            sample_rate,
            fmin,
            fmax,
            weights: Tensor::new(&[n_mels, bins], w)?,
        })
    }

    pub fn from_config(cfg: &MelConfig) -> Result<Self> {
        Self::new(cfg.n_mels, cfg.stft.fft_size, cfg.sample_rate, cfg.fmin, cfg.fmax)
    }

    /// Center frequency of each band in Hz.
    pub fn centers(&self) -> Vec<f64> {
        let (lo, hi) = (hz_to_mel(self.fmin), hz_to_mel(self.fmax));
        (1..=self.n_mels)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (self.n_mels + 1) as f64))
            .collect()
    }

    /// `weights · mag` for a `[frames, bins]` magnitude matrix, as `[n_mels, frames]`.
    pub fn apply(&self, mag: &[T], frames: usize) -> Vec<T> {
        let bins = self.weights.shape()[1];
        let mut out = vec![T::zero(); self.n_mels * frames];
        for m in 0..self.n_mels {
            let row = self.weights.row(m);
            // Triangles are sparse; skip zero weights.
            let nz: Vec<(usize, T)> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != T::zero())
                .map(|(k, &v)| (k, v))
                .collect();
            for f in 0..frames {
                let spec = &mag[f * bins..(f + 1) * bins];
                out[m * frames + f] = nz.iter().map(|&(k, v)| v * spec[k]).sum();
            }
        }
        out
    }
}

/// Natural-log mel spectrogram, floored at [`LOG_MEL_FLOOR`].
/// `[T] -> [n_mels, frames]`, `[B, T] -> [B, n_mels, frames]`.
pub fn mel_spectrogram<T: Real>(x: &Tensor<T>, fb: &MelFilterbank<T>, cfg: &StftConfig) -> Result<Tensor<T>> {
    let mag = super::stft::stft_magnitude(x, cfg)?;
    let nd = mag.shape().len();
    let (frames, bins) = (mag.shape()[nd - 2], mag.shape()[nd - 1]);
    if bins != fb.weights.shape()[1] {
        return Err(invalid(
            "mel_spectrogram",
            format!("filterbank has {} bins, stft has {bins}", fb.weights.shape()[1]),
        ));
    }
    let rows = mag.len() / (frames * bins);
    let floor = T::of(LOG_MEL_FLOOR);
    let mut out = Vec::with_capacity(rows * fb.n_mels * frames);
    for r in 0..rows {
        let energies = fb.apply(&mag.data()[r * frames * bins..(r + 1) * frames * bins], frames);
        out.extend(energies.into_iter().map(|v| v.max(floor).ln()));
    }
    let mut shape = mag.shape()[..nd - 2].to_vec();
    shape.push(fb.n_mels);
    shape.push(frames);
    Tensor::new(&shape, out)
}
