//! 16-bit PCM WAV files and the in-memory clip type.

use std::io::{Read, Seek, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 22050;

/// Scale between PCM16 codes and floating-point samples.
pub const PCM_SCALE: f64 = 32768.0;

/// Mono audio in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub id: String,
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl AudioClip {
    /// Rejects NaN and samples outside `[-1, 1]`.
    pub fn new(id: impl Into<String>, sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if let Some(i) = samples.iter().position(|v| !(v.abs() <= 1.0)) {
            return Err(Error::Corpus(format!(
                "clip {id}: sample {i} is {} (must be finite and within [-1, 1])",
                samples[i]
            )));
        }
        Ok(Self {
            id,
            sample_rate,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Float sample to PCM16: round half away from zero, then clamp.
pub fn quantize(x: f64) -> i16 {
    (x * PCM_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn dequantize(code: i16) -> f64 {
    code as f64 / PCM_SCALE
}

/// Decodes PCM16 WAV data; multichannel input is averaged to mono.
pub fn decode<R: Read + Seek>(reader: R, id: &str, origin: &Path) -> Result<AudioClip> {
    let bad = |detail: String| Error::Wav {
        path: origin.to_path_buf(),
        detail,
    };
    let mut wav = hound::WavReader::new(reader).map_err(|e| bad(format!("malformed WAV: {e}")))?;
    let spec = wav.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(bad(format!(
            "unsupported codec: {:?} with {} bits per sample (only 16-bit PCM is read)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(bad("zero channels".into()));
    }
    let codes = wav
        .samples::<i16>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| bad(format!("corrupt sample data: {e}")))?;
    let samples = codes
        .chunks(channels)
        .map(|frame| frame.iter().map(|&c| dequantize(c)).sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(id, spec.sample_rate, samples)
}

pub fn encode<W: Write + Seek>(writer: W, clip: &AudioClip, origin: &Path) -> Result<()> {
    let bad = |e: hound::Error| Error::Wav {
        path: origin.to_path_buf(),
        detail: e.to_string(),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::new(writer, spec).map_err(bad)?;
    let mut samples = w.get_i16_writer(clip.samples.len() as u32);
    for &x in &clip.samples {
        samples.write_sample(quantize(x));
    }
    samples.flush().map_err(bad)?;
    w.finalize().map_err(bad)
}

/// Reads a WAV file; the clip id is the file stem.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
    decode(std::io::BufReader::new(file), id, path)
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    encode(std::io::BufWriter::new(file), clip, path)
}
