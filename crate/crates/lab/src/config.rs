//! Run configuration: a TOML file with `[data]`, `[model]`, `[losses]`,
//! `[trainer]` and `[metrics]` sections.
//!
//! Every key is optional and defaults to the desk-scale run; unknown keys
//! are rejected so typos cannot silently fall back to a default.

use std::path::{Path, PathBuf};

use prls_core::dsp::{F0Config, PadMode, StftConfig};
use prls_core::losses::{MultiStftConfig, PrlsConfig};
use prls_core::models::{DiscriminatorSpec, GeneratorSpec, MelGanSpec, PwGanSpec};
use prls_core::optim::{OptimConfig, OptimKind};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub losses: LossConfig,
    pub trainer: TrainerConfig,
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Folder of WAV files to train on; empty means a synthetic corpus.
    pub corpus_dir: String,
    /// Seed of the synthetic corpus.
    pub corpus_seed: u64,
    pub train_clips: usize,
    pub test_clips: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    /// Samples per training segment; a multiple of the hop (256).
    pub segment_length: usize,
    pub batch_size: usize,
    /// Fixed test-split segments scored for the held-out STFT loss.
    pub heldout_segments: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus_dir: String::new(),
            corpus_seed: 1234,
            train_clips: 64,
            test_clips: 8,
            clip_seconds: 2.0,
            sample_rate: 22050,
            segment_length: 4096,
            batch_size: 8,
            heldout_segments: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vocoder {
    MelGan,
    PwGan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocoder: Vocoder,
    pub n_mels: usize,
    pub hop: usize,
    pub melgan_base_channels: usize,
    pub melgan_strides: Vec<usize>,
    pub melgan_dilations: Vec<usize>,
    pub pwgan_layers: usize,
    pub pwgan_dilation_cycle: usize,
    pub pwgan_residual_channels: usize,
    pub pwgan_gate_channels: usize,
    pub pwgan_skip_channels: usize,
    pub disc_channels: usize,
    /// 0 picks the vocoder's default: 3 scales for MelGAN, 1 for PWGAN.
    pub disc_scales: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let mg = MelGanSpec::default();
        let pw = PwGanSpec::default();
        Self {
            vocoder: Vocoder::MelGan,
            n_mels: mg.n_mels,
            hop: mg.hop,
            melgan_base_channels: mg.base_channels,
            melgan_strides: mg.strides,
            melgan_dilations: mg.dilations,
            pwgan_layers: pw.layers,
            pwgan_dilation_cycle: pw.dilation_cycle,
            pwgan_residual_channels: pw.residual_channels,
            pwgan_gate_channels: pw.gate_channels,
            pwgan_skip_channels: pw.skip_channels,
            disc_channels: DiscriminatorSpec::single().channels,
            disc_scales: 0,
        }
    }
}

impl ModelConfig {
    pub fn generator(&self) -> GeneratorSpec {
        match self.vocoder {
            Vocoder::MelGan => GeneratorSpec::MelGan(MelGanSpec {
                n_mels: self.n_mels,
                base_channels: self.melgan_base_channels,
                strides: self.melgan_strides.clone(),
                dilations: self.melgan_dilations.clone(),
                hop: self.hop,
                ..MelGanSpec::default()
            }),
            Vocoder::PwGan => GeneratorSpec::PwGan(PwGanSpec {
                n_mels: self.n_mels,
                layers: self.pwgan_layers,
                dilation_cycle: self.pwgan_dilation_cycle,
                residual_channels: self.pwgan_residual_channels,
                gate_channels: self.pwgan_gate_channels,
                skip_channels: self.pwgan_skip_channels,
                hop: self.hop,
                ..PwGanSpec::default()
            }),
        }
    }

    pub fn discriminator(&self) -> DiscriminatorSpec {
        let scales = match (self.disc_scales, self.vocoder) {
            (0, Vocoder::MelGan) => 3,
            (0, Vocoder::PwGan) => 1,
            (n, _) => n,
        };
        DiscriminatorSpec {
            scales,
            channels: self.disc_channels,
            ..DiscriminatorSpec::single()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Pointwise relativistic terms on (true) or plain LSGAN (false).
    pub prls: bool,
    pub lambda_rls: f64,
    pub margin: f64,
    pub lambda_adv: f64,
    pub lambda_topk: f64,
    pub k_fraction: f64,
    /// `[fft_size, win_length, hop]` triples, centered.
    pub stft_resolutions: Vec<[usize; 3]>,
}

impl Default for LossConfig {
    fn default() -> Self {
        let p = PrlsConfig::default();
        Self {
            prls: true,
            lambda_rls: p.lambda_rls,
            margin: p.margin,
            lambda_adv: p.lambda_adv,
            lambda_topk: p.lambda_topk,
            k_fraction: p.k_fraction,
            stft_resolutions: MultiStftConfig::default()
                .resolutions
                .iter()
                .map(|c| [c.fft_size, c.win_length, c.hop])
                .collect(),
        }
    }
}

impl LossConfig {
    pub fn prls_config(&self, d_start: usize) -> PrlsConfig {
        PrlsConfig {
            lambda_rls: self.lambda_rls,
            margin: self.margin,
            lambda_adv: self.lambda_adv,
            lambda_topk: self.lambda_topk,
            k_fraction: self.k_fraction,
            enabled_after: d_start,
        }
    }

    pub fn stft_config(&self) -> MultiStftConfig {
        MultiStftConfig {
            resolutions: self
                .stft_resolutions
                .iter()
                .map(|&[fft_size, win_length, hop]| StftConfig {
                    fft_size,
                    win_length,
                    hop,
                    padding: PadMode::Center,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    RAdam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    /// Iterations at which the learning rate is halved.
    pub halve_at: Vec<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            betas: [0.9, 0.999],
            eps: 1e-8,
            grad_clip: 0.0,
            halve_at: Vec::new(),
        }
    }
}

impl OptimizerConfig {
    pub fn core(&self) -> OptimConfig {
        OptimConfig {
            kind: match self.kind {
                OptimizerKind::Adam => OptimKind::Adam,
                OptimizerKind::RAdam => OptimKind::RAdam,
            },
            lr: self.lr,
            betas: (self.betas[0], self.betas[1]),
            eps: self.eps,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub seed: u64,
    pub precision: Precision,
    pub total_iterations: usize,
    /// First iteration with discriminator updates and adversarial terms.
    pub d_start_iteration: usize,
    pub generator: OptimizerConfig,
    pub discriminator: OptimizerConfig,
    pub log_interval: usize,
    /// 0 disables periodic checkpoints (the final one is always written).
    pub checkpoint_interval: usize,
}

impl Default for TrainerConfig {
    /// MelGAN settings: Adam at 1e-3 for both networks, D clipped at 1,
    /// G halved at 50K and 100K, D halved at 100K.
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F32,
            total_iterations: 3000,
            d_start_iteration: 2000,
            generator: OptimizerConfig {
                halve_at: vec![50_000, 100_000],
                ..OptimizerConfig::default()
            },
            discriminator: OptimizerConfig {
                grad_clip: 1.0,
                halve_at: vec![100_000],
                ..OptimizerConfig::default()
            },
            log_interval: 10,
            checkpoint_interval: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub f0_min: f64,
    pub f0_max: f64,
    pub voicing_threshold: f64,
    pub rms_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        let f = F0Config::default();
        Self {
            f0_min: f.fmin,
            f0_max: f.fmax,
            voicing_threshold: f.voicing_threshold,
            rms_threshold: f.rms_threshold,
        }
    }
}

impl MetricsConfig {
    pub fn f0_config(&self, sample_rate: u32) -> F0Config {
        F0Config {
            sample_rate,
            fmin: self.f0_min,
            fmax: self.f0_max,
            voicing_threshold: self.voicing_threshold,
            rms_threshold: self.rms_threshold,
            ..F0Config::default()
        }
    }
}

impl RunConfig {
    /// Parallel WaveGAN settings: RAdam at 1e-4, G clipped at 10, D at 1,
    /// one discriminator scale.
    pub fn pwgan() -> Self {
        let mut c = Self::default();
        c.model.vocoder = Vocoder::PwGan;
        for opt in [&mut c.trainer.generator, &mut c.trainer.discriminator] {
            opt.kind = OptimizerKind::RAdam;
            opt.lr = 1e-4;
            opt.halve_at.clear();
        }
        c.trainer.generator.grad_clip = 10.0;
        c.trainer.discriminator.grad_clip = 1.0;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string() + &span_note(text, e.span())]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn corpus_dir(&self) -> Option<PathBuf> {
        (!self.data.corpus_dir.is_empty()).then(|| PathBuf::from(&self.data.corpus_dir))
    }

    /// Collects every problem rather than stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let d = &self.data;
        let t = &self.trainer;
        if d.batch_size == 0 {
            errs.push("data.batch_size must be at least 1".to_string());
        }
        if self.model.hop == 0 || d.segment_length == 0 || !d.segment_length.is_multiple_of(self.model.hop) {
            errs.push(format!(
                "data.segment_length {} must be a positive multiple of model.hop {}",
                d.segment_length, self.model.hop
            ));
        }
        if self.corpus_dir().is_none() {
            if d.train_clips == 0 || d.test_clips == 0 {
                errs.push("data.train_clips and data.test_clips must be at least 1".into());
            }
            if !(d.clip_seconds > 0.0) {
                errs.push(format!("data.clip_seconds {} must be positive", d.clip_seconds));
            } else if ((d.clip_seconds * d.sample_rate as f64) as usize) < d.segment_length {
                errs.push(format!(
                    "data.clip_seconds {} is shorter than data.segment_length {}",
                    d.clip_seconds, d.segment_length
                ));
            }
        }
        if d.sample_rate == 0 {
            errs.push("data.sample_rate must be positive".into());
        }
        if d.heldout_segments == 0 {
            errs.push("data.heldout_segments must be at least 1".into());
        }
        if let Err(e) = self.model.generator().validate() {
            errs.push(format!("model: {e}"));
        }
        if let Err(e) = self.model.discriminator().validate() {
            errs.push(format!("model: {e}"));
        }
        let disc = self.model.discriminator();
        let shortest_scale = d.segment_length / disc.pool.pow(disc.scales.saturating_sub(1) as u32);
        if shortest_scale < disc.receptive_field() {
            errs.push(format!(
                "data.segment_length {} leaves {} samples at the coarsest discriminator scale, below its receptive field {}",
                d.segment_length,
                shortest_scale,
                disc.receptive_field()
            ));
        }
        if let Err(e) = self.losses.prls_config(t.d_start_iteration).validate() {
            errs.push(format!("losses: {e}"));
        }
        if let Err(e) = self.losses.stft_config().validate() {
            errs.push(format!("losses.stft_resolutions: {e}"));
        }
        if t.d_start_iteration > t.total_iterations {
            errs.push(format!(
                "trainer.d_start_iteration {} exceeds trainer.total_iterations {}",
                t.d_start_iteration, t.total_iterations
            ));
        }
        for (name, opt) in [("generator", &t.generator), ("discriminator", &t.discriminator)] {
            if let Err(e) = opt.core().validate() {
                errs.push(format!("trainer.{name}: {e}"));
            }
            if opt.grad_clip < 0.0 {
                errs.push(format!("trainer.{name}.grad_clip must be >= 0"));
            }
        }
        if t.log_interval == 0 {
            errs.push("trainer.log_interval must be at least 1".into());
        }
        let m = &self.metrics;
        if !(m.f0_min > 0.0 && m.f0_min < m.f0_max) {
            errs.push(format!("metrics: need 0 < f0_min < f0_max, got {} and {}", m.f0_min, m.f0_max));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

fn span_note(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

/// The default configuration as a commented TOML file.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../configs/desk.toml");
