//! Synthetic harmonic corpora and WAV-directory corpora.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wav::{read_wav, write_wav, AudioClip, DEFAULT_SAMPLE_RATE};

pub const MANIFEST_NAME: &str = "manifest.json";

pub const F0_RANGE: (f64, f64) = (110.0, 330.0);

/// Noise level relative to the clean signal RMS.
pub const NOISE_DB: f64 = -40.0;

pub const PEAK: f64 = 0.9;

/// Samples between f0 random-walk steps.
const CONTROL_HOP: usize = 256;

/// Where a corpus came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: u64, clips: usize, seconds: f64 },
    Directory { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub clips: Vec<AudioClip>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub provenance: Provenance,
}

/// Default number of held-out clips for a corpus of `n` (one in nine, so
/// 72 clips split 64 / 8).
pub fn default_test_count(n: usize) -> usize {
    if n < 2 {
        0
    } else {
        (n / 9).max(1)
    }
}

impl Corpus {
    /// The last `test` clips are held out.
    pub fn new(clips: Vec<AudioClip>, test: usize, provenance: Provenance) -> Result<Self> {
        let n = clips.len();
        if test > n {
            return Err(Error::Corpus(format!("{test} test clips requested from {n}")));
        }
        let corpus = Self {
            clips,
            train: (0..n - test).collect(),
            test: (n - test..n).collect(),
            provenance,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Checks that the split is disjoint and covers every clip, and that
    /// every clip shares one sample rate.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![0u8; self.clips.len()];
        for &i in self.train.iter().chain(&self.test) {
            match seen.get_mut(i) {
                Some(s) => *s += 1,
                None => return Err(Error::Corpus(format!("split index {i} out of range"))),
            }
        }
        if seen.iter().any(|&s| s != 1) {
            return Err(Error::Corpus("train/test split must be disjoint and exhaustive".into()));
        }
        if let Some(first) = self.clips.first() {
            if let Some(c) = self.clips.iter().find(|c| c.sample_rate != first.sample_rate) {
                return Err(Error::Corpus(format!(
                    "clip {} has sample rate {}, expected {}",
                    c.id, c.sample_rate, first.sample_rate
                )));
            }
        }
        Ok(())
    }

    pub fn sample_rate(&self) -> u32 {
        self.clips.first().map_or(DEFAULT_SAMPLE_RATE, |c| c.sample_rate)
    }

    pub fn shortest(&self, split: &[usize]) -> usize {
        split.iter().map(|&i| self.clips[i].len()).min().unwrap_or(0)
    }

    /// Writes every clip as `<id>.wav` plus a manifest naming the split.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.clips.len());
        for (i, clip) in self.clips.iter().enumerate() {
            let file = format!("{}.wav", clip.id);
            write_wav(dir.join(&file), clip)?;
            let split = if self.test.contains(&i) { Split::Test } else { Split::Train };
            entries.push(ManifestEntry {
                id: clip.id.clone(),
                file,
                split,
            });
        }
        let manifest = Manifest {
            provenance: self.provenance.clone(),
            sample_rate: self.sample_rate(),
            clips: entries,
        };
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Loads a flat folder of WAV files.
    ///
    /// With a manifest, its split is used. Without one, files are taken in
    /// name order and the last [`default_test_count`] are held out.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_NAME);
        let provenance = Provenance::Directory {
            path: dir.to_path_buf(),
        };
        if manifest_path.exists() {
            let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            let manifest: Manifest = serde_json::from_str(&text)
                .map_err(|e| Error::Corpus(format!("{}: {e}", manifest_path.display())))?;
            let mut clips = Vec::new();
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (i, entry) in manifest.clips.iter().enumerate() {
                let mut clip = read_wav(dir.join(&entry.file))?;
                clip.id = entry.id.clone();
                clips.push(clip);
                match entry.split {
                    Split::Train => train.push(i),
                    Split::Test => test.push(i),
                }
            }
            let corpus = Self {
                clips,
                train,
                test,
                provenance,
            };
            corpus.validate()?;
            return Ok(corpus);
        }
        let files = wav_files(dir)?;
        if files.is_empty() {
            return Err(Error::Corpus(format!("no .wav files in {}", dir.display())));
        }
        let clips = files.iter().map(read_wav).collect::<Result<Vec<_>>>()?;
        let test = default_test_count(clips.len());
        Self::new(clips, test, provenance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub provenance: Provenance,
    pub sample_rate: u32,
    pub clips: Vec<ManifestEntry>,
}

/// `.wav` files directly inside `dir`, sorted by name.
pub fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// One synthetic clip and the per-sample f0 contour that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub clip: AudioClip,
    pub f0: Vec<f64>,
}

/// Generates clip `index` of the corpus seeded by `seed`.
///
/// Each clip draws from its own ChaCha stream, so a clip does not depend on
/// how many others are generated alongside it.
pub fn synth_clip(seed: u64, index: usize, seconds: f64, sample_rate: u32) -> SynthClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let sr = sample_rate as f64;
    let n = (seconds * sr).round() as usize;

    // f0: random walk in log frequency, reflected at the band edges, with a
    // step every CONTROL_HOP samples and linear interpolation between steps.
    let (lo, hi) = (F0_RANGE.0.ln(), F0_RANGE.1.ln());
    let controls = n / CONTROL_HOP + 2;
    let mut knots = Vec::with_capacity(controls);
    let mut v = rng.random_range(lo..hi);
    for _ in 0..controls {
        knots.push(v);
        v += rng.random_range(-0.02..0.02);
        if v < lo {
            v = 2.0 * lo - v;
        }
        if v > hi {
            v = 2.0 * hi - v;
        }
    }
    let f0: Vec<f64> = (0..n)
        .map(|i| {
            let k = i / CONTROL_HOP;
            let frac = (i % CONTROL_HOP) as f64 / CONTROL_HOP as f64;
            (knots[k] * (1.0 - frac) + knots[k + 1] * frac).exp()
        })
        .collect();

    let harmonics = rng.random_range(3..=6usize);
    let amps: Vec<f64> = (1..=harmonics).map(|h| rng.random_range(0.3..1.0) / h as f64).collect();
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let attack = rng.random_range(0.02..0.08) * sr;
    let decay = rng.random_range(0.05..0.15) * sr;
    let sustain = rng.random_range(0.6..0.9);
    let release = rng.random_range(0.1..0.3) * sr;
    let envelope = |i: usize| {
        let t = i as f64;
        let to_end = (n - i) as f64;
        let a = if t < attack {
            t / attack
        } else if t < attack + decay {
            1.0 - (1.0 - sustain) * (t - attack) / decay
        } else {
            sustain
        };
        if to_end < release {
            a * to_end / release
        } else {
            a
        }
    };

    let mut phase = 0.0;
    let mut x: Vec<f64> = f0
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let s: f64 = amps
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(h, (a, p))| a * ((h + 1) as f64 * phase + p).sin())
                .sum();
            phase = (phase + 2.0 * PI * f / sr) % (2.0 * PI);
            s * envelope(i)
        })
        .collect();

    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    let noise_std = rms * 10f64.powf(NOISE_DB / 20.0);
    for v in &mut x {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        *v += noise_std * z;
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = PEAK / peak;
        x.iter_mut().for_each(|v| *v *= g);
    }
    let clip = AudioClip::new(format!("clip{index:04}"), sample_rate, x).expect("peak-normalized samples are in range");
    SynthClip { clip, f0 }
}

/// `clips` synthetic clips of `seconds` each, the last `test` held out.
pub fn synth_corpus(seed: u64, clips: usize, seconds: f64, test: usize, sample_rate: u32) -> Result<Corpus> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(Error::Corpus(format!("clip duration {seconds} must be positive")));
    }
    let all = (0..clips)
        .map(|i| synth_clip(seed, i, seconds, sample_rate).clip)
        .collect();
    Corpus::new(all, test, Provenance::Synthetic { seed, clips, seconds })
}
