//! Copy-synthesis: waveform to mel to generator output.

use prls_core::models::{GeneratorSpec, ParameterSet};
use prls_core::{Real, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batch::{conditioning_mel, Features};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::wav::AudioClip;

/// A trained generator ready to resynthesize audio.
pub struct Vocoder<T: Real> {
    pub spec: GeneratorSpec,
    pub params: ParameterSet<T>,
    pub features: Features<T>,
    pub sample_rate: u32,
}

impl<T: Real> Vocoder<T> {
    pub fn new(cfg: &RunConfig, params: ParameterSet<T>) -> Result<Self> {
        let spec = cfg.model.generator();
        prls_core::models::check_generator_params(&spec, &params)?;
        let mut mel = conditioning_mel(cfg.data.sample_rate);
        mel.n_mels = cfg.model.n_mels;
        mel.stft.hop = cfg.model.hop;
        Ok(Self {
            spec,
            params,
            features: Features::new(mel)?,
            sample_rate: cfg.data.sample_rate,
        })
    }

    /// Resynthesizes `clip` from its own mel spectrogram.
    ///
    /// The input is cut to a whole number of hops, so the output can be up
    /// to `hop - 1` samples shorter. `noise_seed` only matters for
    /// generators that take a noise input.
    pub fn copy_synthesize(&self, clip: &AudioClip, noise_seed: u64) -> Result<AudioClip> {
        if clip.sample_rate != self.sample_rate {
            return Err(Error::Corpus(format!(
                "clip {} has sample rate {}, the model was trained at {}",
                clip.id, clip.sample_rate, self.sample_rate
            )));
        }
        let hop = self.features.hop();
        let len = clip.len() / hop * hop;
        if len == 0 {
            return Err(Error::Corpus(format!("clip {} is shorter than one hop ({hop} samples)", clip.id)));
        }
        let x: Vec<T> = clip.samples[..len].iter().map(|&v| T::of(v)).collect();
        let mel = self.features.mel(&Tensor::new(&[1, len], x)?)?;

        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let mel = tape.constant(mel);
        let noise = self.spec.needs_noise().then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            tape.constant(Tensor::randn(&[1, 1, len], 1.0, &mut rng))
        });
        let y = self.spec.generate(&tape, mel, noise, &bound)?;
        let out = tape.value(y)?;
        if !out.is_finite() {
            return Err(Error::NonFinite {
                what: format!("synthesized audio for {}", clip.id),
                iteration: 0,
                snapshot: None,
            });
        }
        // The generator ends in tanh; the clamp only guards float rounding.
        let samples = out.data().iter().map(|v| v.f64().clamp(-1.0, 1.0)).collect();
        AudioClip::new(clip.id.clone(), self.sample_rate, samples)
    }
}
