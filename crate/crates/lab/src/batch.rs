//! Aligned (waveform segment, log-mel) training batches.

use prls_core::dsp::{mel_spectrogram, MelConfig, MelFilterbank, PadMode};
use prls_core::{Real, Tensor};
use rand::Rng;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Mel settings for generator conditioning.
///
/// Hop-aligned padding gives exactly `segment / hop` frames per segment, so
/// frame `f` conditions samples `f*hop .. (f+1)*hop`.
pub fn conditioning_mel(sample_rate: u32) -> MelConfig {
    MelConfig {
        sample_rate,
        fmax: sample_rate as f64 / 2.0,
        ..MelConfig::with_padding(PadMode::HopAligned)
    }
}

/// Filterbank plus settings, built once and reused for every batch.
#[derive(Debug, Clone)]
pub struct Features<T> {
    pub cfg: MelConfig,
    pub bank: MelFilterbank<T>,
}

impl<T: Real> Features<T> {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        let bank = MelFilterbank::from_config(&cfg)?;
        Ok(Self { cfg, bank })
    }

    pub fn hop(&self) -> usize {
        self.cfg.stft.hop
    }

    /// `[L] -> [n_mels, L / hop]` (or `[B, L] -> [B, n_mels, L / hop]`).
    pub fn mel(&self, wav: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(mel_spectrogram(wav, &self.bank, &self.cfg.stft)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    /// `[B, 1, L]`.
    pub wav: Tensor<T>,
    /// `[B, n_mels, L / hop]`.
    pub mel: Tensor<T>,
    pub clips: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl<T> Batch<T> {
    pub fn size(&self) -> usize {
        self.clips.len()
    }
}

/// Draws `batch` segments of `segment` samples uniformly over the clips
/// listed in `split` and over offsets within each clip.
///
/// Per segment, the clip index is drawn first and then the offset, so the
/// sequence is a pure function of the rng state.
pub fn sample_batch<T: Real, R: Rng + ?Sized>(
    corpus: &Corpus,
    split: &[usize],
    segment: usize,
    batch: usize,
    features: &Features<T>,
    rng: &mut R,
) -> Result<Batch<T>> {
    let hop = features.hop();
    if segment == 0 || !segment.is_multiple_of(hop) {
        return Err(Error::Corpus(format!("segment length {segment} must be a positive multiple of {hop}")));
    }
    if split.is_empty() || batch == 0 {
        return Err(Error::Corpus("empty split or zero batch size".into()));
    }
    let shortest = corpus.shortest(split);
    if shortest < segment {
        return Err(Error::Corpus(format!(
            "segment of {segment} samples is longer than the shortest clip ({shortest})"
        )));
    }
    let mut wav = Vec::with_capacity(batch * segment);
    let (mut clips, mut offsets) = (Vec::with_capacity(batch), Vec::with_capacity(batch));
    for _ in 0..batch {
        let ci = split[rng.random_range(0..split.len())];
        let clip = &corpus.clips[ci];
        let off = rng.random_range(0..=clip.len() - segment);
        wav.extend(clip.samples[off..off + segment].iter().map(|&v| T::of(v)));
        clips.push(ci);
        offsets.push(off);
    }
    let flat = Tensor::new(&[batch, segment], wav)?;
    let mel = features.mel(&flat)?;
    Ok(Batch {
        wav: flat.reshape(&[batch, 1, segment])?,
        mel,
        clips,
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_corpus;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_bad_segments() {
        let corpus = synth_corpus(0, 3, 0.2, 1, 22050).unwrap();
        let f = Features::<f64>::new(conditioning_mel(22050)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_batch(&corpus, &corpus.train, 1000, 1, &f, &mut rng).is_err());
        assert!(sample_batch(&corpus, &corpus.train, 256 * 40, 1, &f, &mut rng).is_err());
        assert!(sample_batch(&corpus, &[], 256, 1, &f, &mut rng).is_err());
    }
}
