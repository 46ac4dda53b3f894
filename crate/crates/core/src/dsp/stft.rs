//! Short-time Fourier transform magnitudes and their vector-Jacobian product.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::fft::RealFft;
use crate::tape::kernels::reflect_index;
use crate::tensor::{Real, Tensor};

/// How a signal is padded before framing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PadMode {
    /// Frames start at sample 0; the tail that does not fill a frame is dropped.
    None,
    /// Reflect-pad `fft_size / 2` on both sides.
    Center,
    /// Reflect-pad `win_length - hop` split evenly, so a signal of `n * hop`
    /// samples yields exactly `n` frames.
    HopAligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_length: usize,
    pub hop: usize,
    pub padding: PadMode,
}

impl StftConfig {
    pub fn new(fft_size: usize, win_length: usize, hop: usize, padding: PadMode) -> Result<Self> {
        let cfg = Self {
            fft_size,
            win_length,
            hop,
            padding,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.win_length == 0 || self.win_length > self.fft_size {
            return Err(invalid(
                "stft",
                format!("win_length {} must be in 1..={}", self.win_length, self.fft_size),
            ));
        }
        if self.hop == 0 {
            return Err(invalid("stft", "hop must be at least 1".into()));
        }
        if self.padding == PadMode::HopAligned && self.hop > self.win_length {
            return Err(invalid("stft", "hop-aligned padding needs hop <= win_length".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Reflect padding applied to (left, right).
    pub fn pad_amounts(&self) -> (usize, usize) {
        match self.padding {
            PadMode::None => (0, 0),
            PadMode::Center => (self.fft_size / 2, self.fft_size / 2),
            PadMode::HopAligned => {
                let total = self.win_length - self.hop;
                (total / 2, total - total / 2)
            }
        }
    }

    /// Frame count for a signal of `len` samples:
    /// `floor((len_padded - win_length) / hop) + 1`.
    pub fn num_frames(&self, len: usize) -> Result<usize> {
        let (l, r) = self.pad_amounts();
        if l.max(r) > 0 && l.max(r) >= len {
            return Err(Error::TooShort {
                what: "stft reflect padding",
                len,
                needed: l.max(r) + 1,
            });
        }
        let padded = len + l + r;
        if padded < self.win_length {
            return Err(Error::TooShort {
                what: "stft",
                len,
                needed: self.win_length,
            });
        }
        Ok((padded - self.win_length) / self.hop + 1)
    }

    /// Periodic Hann window of `win_length` samples.
    pub fn window<T: Real>(&self) -> Vec<T> {
        let n = self.win_length;
        (0..n)
            .map(|i| T::of(0.5 - 0.5 * Float::cos(2.0 * PI * i as f64 / n as f64)))
            .collect()
    }
}

/// Precomputed window and FFT tables for one configuration.
#[derive(Debug, Clone)]
pub struct StftPlan<T> {
    pub cfg: StftConfig,
    window: Vec<T>,
    fft: RealFft<T>,
}

/// Complex spectra of one or more rows, `[rows, frames, bins]` each.
#[derive(Debug, Clone)]
pub struct Spectra<T> {
    pub re: Vec<T>,
    pub im: Vec<T>,
    pub frames: usize,
}

impl<T: Real> StftPlan<T> {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            window: cfg.window(),
            fft: RealFft::new(cfg.fft_size),
            cfg,
        })
    }

    fn padded(&self, x: &[T]) -> Vec<T> {
        let (l, r) = self.cfg.pad_amounts();
        (0..x.len() + l + r)
            .map(|j| x[reflect_index(j as isize - l as isize, x.len())])
            .collect()
    }

    /// Complex spectra of `rows` signals of length `len`, laid out contiguously in `x`.
    pub fn spectra(&self, x: &[T], rows: usize, len: usize) -> Result<Spectra<T>> {
        let frames = self.cfg.num_frames(len)?;
        let bins = self.cfg.bins();
        let n = self.cfg.fft_size;
        let win = self.cfg.win_length;
        let mut re = vec![T::zero(); rows * frames * bins];
        let mut im = vec![T::zero(); rows * frames * bins];
        let mut buf = vec![T::zero(); n];
        for row in 0..rows {
            let padded = self.padded(&x[row * len..(row + 1) * len]);
            for f in 0..frames {
                let seg = &padded[f * self.cfg.hop..f * self.cfg.hop + win];
                for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                    *b = s * w;
                }
                buf[win..].fill(T::zero());
                let at = (row * frames + f) * bins;
                self.fft.forward(&buf, &mut re[at..at + bins], &mut im[at..at + bins]);
            }
        }
        Ok(Spectra { re, im, frames })
    }

    /// Gradient of `Σ gmag · |STFT(x)|` with respect to `x`.
    pub fn magnitude_vjp(&self, gmag: &[T], spec: &Spectra<T>, rows: usize, len: usize) -> Vec<T> {
        let bins = self.cfg.bins();
        let n = self.cfg.fft_size;
        let win = self.cfg.win_length;
        let (l, r) = self.cfg.pad_amounts();
        let mut gx = vec![T::zero(); rows * len];
        let mut ur = vec![T::zero(); bins];
        let mut ui = vec![T::zero(); bins];
        let mut frame = vec![T::zero(); n];
        let mut gpad = vec![T::zero(); len + l + r];
        let half = T::of(0.5);
        for row in 0..rows {
            gpad.fill(T::zero());
            for f in 0..spec.frames {
                let base = (row * spec.frames + f) * bins;
                for k in 0..bins {
                    let (xr, xi) = (spec.re[base + k], spec.im[base + k]);
                    let mag = (xr * xr + xi * xi).sqrt();
                    // Half of u_k = gmag_k · X_k / |X_k|; the Hermitian
                    // inverse then yields Re(Σ_k u_k e^{+2πikt/n}).
                    let (vr, vi) = if mag > T::zero() {
                        let s = gmag[base + k] / mag;
                        (s * xr, s * xi)
                    } else {
                        (T::zero(), T::zero())
                    };
                    let edge = k == 0 || 2 * k == n;
                    ur[k] = if edge { vr } else { vr * half };
                    ui[k] = vi * half;
                }
                self.fft.inverse(&ur, &ui, &mut frame);
                let dst = &mut gpad[f * self.cfg.hop..f * self.cfg.hop + win];
                for ((d, &u), &w) in dst.iter_mut().zip(&frame[..win]).zip(&self.window) {
                    *d += u * w;
                }
            }
            let out = &mut gx[row * len..(row + 1) * len];
            for (j, &g) in gpad.iter().enumerate() {
                out[reflect_index(j as isize - l as isize, len)] += g;
            }
        }
        gx
    }
}

pub(crate) fn magnitudes<T: Real>(spec: &Spectra<T>) -> Vec<T> {
    spec.re
        .iter()
        .zip(&spec.im)
        .map(|(&r, &i)| (r * r + i * i).sqrt())
        .collect()
}

/// Split a tensor `[..., T]` into (rows, T) and the leading shape.
pub(crate) fn rows_of(shape: &[usize]) -> Result<(usize, usize, Vec<usize>)> {
    match shape.split_last() {
        Some((&len, lead)) => Ok((lead.iter().product(), len, lead.to_vec())),
        None => Err(invalid("stft", "expected at least one axis".into())),
    }
}

/// `|STFT(x)|` of a signal `[T]` or batch `[..., T]`, returned as
/// `[..., frames, fft_size / 2 + 1]`.
pub fn stft_magnitude<T: Real>(x: &Tensor<T>, cfg: &StftConfig) -> Result<Tensor<T>> {
    let plan = StftPlan::new(*cfg)?;
    let (rows, len, mut shape) = rows_of(x.shape())?;
    let spec = plan.spectra(x.data(), rows, len)?;
    shape.push(spec.frames);
    shape.push(cfg.bins());
    Tensor::new(&shape, magnitudes(&spec))
}
