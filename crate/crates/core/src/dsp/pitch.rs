//! Normalized-autocorrelation f0 tracker with a voicing decision.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::fft::FftPlan;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Config {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_threshold: f64,
    /// Minimum frame RMS for a voiced frame.
    pub rms_threshold: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            frame_len: 1024,
            hop: 256,
            fmin: 50.0,
            fmax: 500.0,
            voicing_threshold: 0.3,
            rms_threshold: 1e-3,
        }
    }
}

impl F0Config {
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    /// Sample index at the middle of frame `f`.
    pub fn frame_center(&self, f: usize) -> usize {
        f * self.hop + self.frame_len / 2
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct F0Track {
    /// Hz per frame; 0 for unvoiced frames.
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl F0Track {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }
}

/// Tracks f0 frame by frame.
///
/// Each frame's normalized autocorrelation is searched over lags
/// `sample_rate / fmax ..= sample_rate / fmin`. The smallest-lag local
/// maximum reaching 90% of the band maximum wins, which keeps the tracker
/// off period multiples; the lag is refined by parabolic interpolation.
pub fn estimate_f0<T: Real>(x: &[T], cfg: &F0Config) -> F0Track {
    let frames = cfg.num_frames(x.len());
    let n = cfg.frame_len;
    let sr = cfg.sample_rate as f64;
    let lag_min = (Float::floor(sr / cfg.fmax) as usize).max(2);
    let lag_max = (Float::ceil(sr / cfg.fmin) as usize).min(n - 2);
    let fft_len = (2 * n).next_power_of_two();
    let plan = FftPlan::<f64>::new(fft_len);
    let mut track = F0Track {
        f0: vec![0.0; frames],
        voiced: vec![false; frames],
    };
    if lag_min >= lag_max {
        return track;
    }
    let mut re = vec![0.0; fft_len];
    let mut im = vec![0.0; fft_len];
    let mut prefix = vec![0.0; n + 1];
    let mut r = vec![0.0; lag_max + 2];

    for f in 0..frames {
        let frame = &x[f * cfg.hop..f * cfg.hop + n];
        for i in 1..=n {
            let v = frame[i - 1].f64();
            prefix[i] = prefix[i - 1] + v * v;
        }
        let total = prefix[n];
        let rms = Float::sqrt(total / n as f64);
        if rms < cfg.rms_threshold {
            continue;
        }

        re.fill(0.0);
        im.fill(0.0);
        for (d, &v) in re.iter_mut().zip(frame) {
            *d = v.f64();
        }
        plan.forward(&mut re, &mut im);
        for (a, b) in re.iter_mut().zip(im.iter_mut()) {
            *a = *a * *a + *b * *b;
            *b = 0.0;
        }
        plan.inverse(&mut re, &mut im);
        let scale = 1.0 / fft_len as f64;

        for (lag, rv) in r.iter_mut().enumerate().take(lag_max + 2).skip(lag_min - 1) {
            let head = prefix[n - lag];
            let tail = total - prefix[lag];
            let denom = Float::sqrt(head * tail);
            *rv = if denom > 0.0 { re[lag] * scale / denom } else { 0.0 };
        }
        let band = &r[lag_min..=lag_max];
        let best = band.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if best < cfg.voicing_threshold {
            continue;
        }
        let pick = (lag_min..=lag_max)
            .find(|&l| r[l] >= 0.9 * best && r[l] >= r[l - 1] && r[l] >= r[l + 1])
            .unwrap_or_else(|| lag_min + band.iter().position(|&v| v == best).unwrap_or(0));
        if r[pick] < cfg.voicing_threshold {
            continue;
        }
        let (a, b, c) = (r[pick - 1], r[pick], r[pick + 1]);
        let curvature = a - 2.0 * b + c;
        let shift = if curvature < 0.0 {
            (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        track.f0[f] = sr / (pick as f64 + shift);
        track.voiced[f] = true;
    }
    track
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sine(freq: f64, secs: f64) -> Vec<f64> {
        let n = (22050.0 * secs) as usize;
        (0..n).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / 22050.0).sin()).collect()
    }

    #[test]
    fn tracks_220_hz_sine() {
        let track = estimate_f0(&sine(220.0, 1.0), &F0Config::default());
        let interior = &track.f0[1..track.len() - 1];
        let good = interior.iter().filter(|&&f| (f - 220.0).abs() <= 2.0).count();
        assert!(good as f64 >= 0.9 * interior.len() as f64, "{good}/{}", interior.len());
    }

    #[test]
    fn sines_across_band_within_two_percent() {
        for freq in [100.0, 137.0, 180.0, 250.0, 333.0, 400.0] {
            let track = estimate_f0(&sine(freq, 0.5), &F0Config::default());
            let voiced: Vec<f64> = track.f0.iter().copied().filter(|&f| f > 0.0).collect();
            assert!(!voiced.is_empty());
            let good = voiced.iter().filter(|&&f| (f - freq).abs() <= 0.02 * freq).count();
            assert!(good as f64 >= 0.9 * voiced.len() as f64, "{freq} Hz");
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let track = estimate_f0(&vec![0.0f64; 8000], &F0Config::default());
        assert!(!track.is_empty());
        assert!(track.voiced.iter().all(|&v| !v));
        assert!(track.f0.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn white_noise_is_mostly_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x: Vec<f64> = (0..22050)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.1 * z
            })
            .collect();
        let track = estimate_f0(&x, &F0Config::default());
        let unvoiced = track.voiced.iter().filter(|&&v| !v).count();
        assert!(unvoiced as f64 >= 0.8 * track.len() as f64, "{unvoiced}/{}", track.len());
    }
}
