//! Mel-cepstral distortion and f0 frame error between a reference and a
//! synthesized waveform. Frames are aligned by index.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::LN_10;

use num_traits::Float;

use crate::dsp::{estimate_f0, mel_cepstra, mel_spectrogram, F0Config, F0Track, MelConfig, MelFilterbank};
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Cepstral coefficients computed per frame; `c0` (energy) is then dropped.
pub const MCD_COEFFS: usize = 13;
/// Relative pitch deviation above which a voiced frame counts as an error.
pub const GROSS_PITCH_ERROR: f64 = 0.2;

/// `10 / ln 10`, the dB factor of the distortion.
pub fn mcd_scale() -> f64 {
    10.0 / LN_10
}

/// Distortion between two `[coeffs, frames]` cepstra, averaged over the
/// common frames. Row 0 is ignored.
pub fn mcd_from_cepstra(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
        return Err(shape_err("mcd", format!("cepstra {sa:?} vs {sb:?}")));
    }
    let frames = sa[1].min(sb[1]);
    if frames == 0 {
        return Err(Error::TooShort {
            what: "mcd common frames",
            len: 0,
            needed: 1,
        });
    }
    let mut total = 0.0;
    for f in 0..frames {
        let ss: f64 = (1..sa[0])
            .map(|d| {
                let diff = a.data()[d * sa[1] + f] - b.data()[d * sb[1] + f];
                diff * diff
            })
            .sum();
        total += mcd_scale() * Float::sqrt(2.0 * ss);
    }
    Ok(total / frames as f64)
}

/// `[MCD_COEFFS, frames]` mel cepstra of a waveform.
pub fn cepstra_of(x: &[f64], cfg: &MelConfig, fb: &MelFilterbank<f64>) -> Result<Tensor<f64>> {
    let mel = mel_spectrogram(&Tensor::from_slice(x), fb, &cfg.stft)?;
    mel_cepstra(&mel, MCD_COEFFS)
}

/// MCD in dB; both signals are truncated to the shorter length.
pub fn mcd(reference: &[f64], synthesized: &[f64], cfg: &MelConfig) -> Result<f64> {
    let n = reference.len().min(synthesized.len());
    let fb = MelFilterbank::from_config(cfg)?;
    let a = cepstra_of(&reference[..n], cfg, &fb)?;
    let b = cepstra_of(&synthesized[..n], cfg, &fb)?;
    mcd_from_cepstra(&a, &b)
}

/// FFE over the common frames of two tracks.
pub fn ffe_from_tracks(reference: &F0Track, synthesized: &F0Track) -> Result<f64> {
    let n = reference.len().min(synthesized.len());
    if n == 0 {
        return Err(Error::TooShort {
            what: "ffe common frames",
            len: 0,
            needed: 1,
        });
    }
    let errors = (0..n)
        .filter(|&i| {
            let (vr, vs) = (reference.voiced[i], synthesized.voiced[i]);
            if vr != vs {
                return true;
            }
            vr && (synthesized.f0[i] - reference.f0[i]).abs() > GROSS_PITCH_ERROR * reference.f0[i]
        })
        .count();
    Ok(errors as f64 / n as f64)
}

pub fn ffe(reference: &[f64], synthesized: &[f64], cfg: &F0Config) -> Result<f64> {
    let n = reference.len().min(synthesized.len());
    ffe_from_tracks(&estimate_f0(&reference[..n], cfg), &estimate_f0(&synthesized[..n], cfg))
}

/// Scores of one reference/synthesis pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub id: alloc::string::String,
    pub mcd_db: f64,
    pub ffe: f64,
    pub mcd_frames: usize,
    pub f0_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: Float::sqrt(var),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub pairs: Vec<PairScore>,
    pub mcd: Aggregate,
    pub ffe: Aggregate,
    /// Ids present on only one side.
    pub unmatched: Vec<alloc::string::String>,
}

impl EvalReport {
    pub fn from_pairs(pairs: Vec<PairScore>, unmatched: Vec<alloc::string::String>) -> Self {
        let m: Vec<f64> = pairs.iter().map(|p| p.mcd_db).collect();
        let f: Vec<f64> = pairs.iter().map(|p| p.ffe).collect();
        Self {
            mcd: Aggregate::of(&m),
            ffe: Aggregate::of(&f),
            pairs,
            unmatched,
        }
    }
}

/// Scores one pair with the default feature settings.
pub fn score_pair(id: &str, reference: &[f64], synthesized: &[f64], mel: &MelConfig, f0: &F0Config) -> Result<PairScore> {
    if reference.is_empty() || synthesized.is_empty() {
        return Err(invalid("score_pair", format!("{id}: empty waveform")));
    }
    let n = reference.len().min(synthesized.len());
    let fb = MelFilterbank::from_config(mel)?;
    let a = cepstra_of(&reference[..n], mel, &fb)?;
    let b = cepstra_of(&synthesized[..n], mel, &fb)?;
    let ta = estimate_f0(&reference[..n], f0);
    let tb = estimate_f0(&synthesized[..n], f0);
    Ok(PairScore {
        id: id.into(),
        mcd_db: mcd_from_cepstra(&a, &b)?,
        ffe: ffe_from_tracks(&ta, &tb)?,
        mcd_frames: a.shape()[1],
        f0_frames: ta.len(),
    })
}

/// Converts any real slice for the f64 metric routines.
pub fn to_f64<T: Real>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.f64()).collect()
}
