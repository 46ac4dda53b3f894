//! Alternating generator/discriminator training.
//!
//! Each iteration draws one batch. Before `d_start_iteration` the generator
//! learns from the multi-resolution STFT loss alone and the discriminator is
//! untouched. From then on the discriminator takes one step on the batch,
//! followed by one generator step against the updated discriminator.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use prls_core::losses::{
    melgan_adv_loss, melgan_d_loss, multi_resolution_stft, prls_adv_total_scales, prls_d_total_scales, MultiStftConfig,
    PrlsConfig, ScoreMap,
};
use prls_core::models::{discriminate, DiscriminatorSpec, GeneratorSpec, ParameterSet};
use prls_core::optim::{clip_global_norm, global_norm, halving_schedule, OptimConfig, OptimState};
use prls_core::{Real, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{conditioning_mel, sample_batch, Batch, Features};
use crate::checkpoint::{Checkpoint, RngState};
use crate::config::RunConfig;
use crate::corpus::{synth_corpus, Corpus};
use crate::error::{Error, Result};

/// File names inside a run directory.
pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(iteration: usize) -> String {
    format!("iter_{iteration:07}.ckpt")
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based: the number of iterations completed after this one.
    pub iteration: usize,
    pub adversarial: bool,
    pub g_loss: f64,
    pub stft_loss: f64,
    pub g_adv_loss: Option<f64>,
    pub d_loss: Option<f64>,
    pub g_grad_norm: f64,
    pub g_grad_norm_clipped: f64,
    pub d_grad_norm: Option<f64>,
    pub d_grad_norm_clipped: Option<f64>,
    /// Discriminator output on real audio, averaged over scales and positions.
    pub real_score: Option<f64>,
    pub fake_score: Option<f64>,
    pub lr_g: f64,
    pub lr_d: f64,
    pub heldout_stft: Option<f64>,
    pub wall_seconds: f64,
}

/// Builds the corpus a configuration describes.
pub fn build_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let d = &cfg.data;
    let corpus = match cfg.corpus_dir() {
        Some(dir) => Corpus::load(dir)?,
        None => synth_corpus(d.corpus_seed, d.train_clips + d.test_clips, d.clip_seconds, d.test_clips, d.sample_rate)?,
    };
    if corpus.train.is_empty() || corpus.test.is_empty() {
        return Err(Error::Corpus("training needs at least one train clip and one test clip".into()));
    }
    for (name, split) in [("train", &corpus.train), ("test", &corpus.test)] {
        let shortest = corpus.shortest(split);
        if shortest < d.segment_length {
            return Err(Error::Corpus(format!(
                "shortest {name} clip has {shortest} samples, fewer than data.segment_length {}",
                d.segment_length
            )));
        }
    }
    Ok(corpus)
}

fn mean_scores<T: Real>(tape: &Tape<T>, maps: &[ScoreMap]) -> Result<f64> {
    let mut total = 0.0;
    for &m in maps {
        total += tape.with_value(m, |t| t.data().iter().map(|v| v.f64()).sum::<f64>() / t.len() as f64)?;
    }
    Ok(total / maps.len() as f64)
}

fn scalar<T: Real>(tape: &Tape<T>, v: Var) -> Result<f64> {
    Ok(tape.item(v)?.f64())
}

fn optimizer_step<T: Real>(
    params: &mut ParameterSet<T>,
    state: &mut OptimState<T>,
    grads: &[Tensor<T>],
    cfg: &OptimConfig,
    lr: f64,
) -> Result<()> {
    let mut values = params.take_values();
    let stepped = state.step(&mut values, grads, lr, cfg.betas, cfg.eps);
    params.restore_values(values)?;
    Ok(stepped?)
}

/// Training state plus everything derived from the configuration.
pub struct Trainer<T: Real> {
    pub cfg: RunConfig,
    pub corpus: Corpus,
    pub generator: ParameterSet<T>,
    pub discriminator: ParameterSet<T>,
    pub g_opt: OptimState<T>,
    pub d_opt: OptimState<T>,
    /// Iterations completed so far.
    pub iteration: usize,
    /// Records produced by this process, oldest first.
    pub history: Vec<IterationRecord>,
    rng: ChaCha8Rng,
    features: Features<T>,
    gen_spec: GeneratorSpec,
    disc_spec: DiscriminatorSpec,
    stft: MultiStftConfig,
    prls: PrlsConfig,
    g_cfg: OptimConfig,
    d_cfg: OptimConfig,
    heldout: Batch<T>,
    heldout_noise: Option<Tensor<T>>,
    run_dir: Option<PathBuf>,
    log: Option<BufWriter<File>>,
    started: Instant,
}

impl<T: Real> Trainer<T> {
    /// Fresh networks initialized from `cfg.trainer.seed`.
    pub fn new(cfg: RunConfig, corpus: Corpus) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.trainer.seed;
        let generator = cfg.model.generator().init_params::<T>(seed)?;
        let discriminator = cfg.model.discriminator().init_params::<T>(seed.wrapping_add(1))?;
        let g_opt = OptimState::new(cfg.trainer.generator.core().kind, &generator.values());
        let d_opt = OptimState::new(cfg.trainer.discriminator.core().kind, &discriminator.values());
        let rng = ChaCha8Rng::seed_from_u64(seed);
        Self::assemble(cfg, corpus, generator, discriminator, g_opt, d_opt, rng, 0)
    }

    /// Continues exactly where the checkpoint left off.
    pub fn resume(ckpt: Checkpoint<T>, corpus: Corpus) -> Result<Self> {
        let rng = ckpt.rng.restore();
        Self::assemble(
            ckpt.config,
            corpus,
            ckpt.generator,
            ckpt.discriminator,
            ckpt.g_opt,
            ckpt.d_opt,
            rng,
            ckpt.iteration,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: RunConfig,
        corpus: Corpus,
        generator: ParameterSet<T>,
        discriminator: ParameterSet<T>,
        g_opt: OptimState<T>,
        d_opt: OptimState<T>,
        rng: ChaCha8Rng,
        iteration: usize,
    ) -> Result<Self> {
        let gen_spec = cfg.model.generator();
        let disc_spec = cfg.model.discriminator();
        if corpus.sample_rate() != cfg.data.sample_rate {
            return Err(Error::Config(vec![format!(
                "corpus sample rate {} differs from data.sample_rate {}",
                corpus.sample_rate(),
                cfg.data.sample_rate
            )]));
        }
        let mut mel_cfg = conditioning_mel(cfg.data.sample_rate);
        mel_cfg.n_mels = cfg.model.n_mels;
        mel_cfg.stft.hop = cfg.model.hop;
        let features = Features::new(mel_cfg)?;

        // The held-out segments come from their own stream so they are the
        // same for every run with this seed, whatever the training draws.
        let mut heldout_rng = ChaCha8Rng::seed_from_u64(cfg.trainer.seed);
        heldout_rng.set_stream(1);
        let heldout = sample_batch(
            &corpus,
            &corpus.test,
            cfg.data.segment_length,
            cfg.data.heldout_segments,
            &features,
            &mut heldout_rng,
        )?;
        let heldout_noise = gen_spec
            .needs_noise()
            .then(|| Tensor::randn(heldout.wav.shape(), 1.0, &mut heldout_rng));

        Ok(Self {
            stft: cfg.losses.stft_config(),
            prls: cfg.losses.prls_config(cfg.trainer.d_start_iteration),
            g_cfg: cfg.trainer.generator.core(),
            d_cfg: cfg.trainer.discriminator.core(),
            cfg,
            corpus,
            generator,
            discriminator,
            g_opt,
            d_opt,
            iteration,
            history: Vec::new(),
            rng,
            features,
            gen_spec,
            disc_spec,
            heldout,
            heldout_noise,
            run_dir: None,
            log: None,
            started: Instant::now(),
        })
    }

    /// Sends the JSONL log, periodic checkpoints, and failure snapshots to
    /// `dir`. The log is appended to, so a resumed run extends it.
    pub fn with_run_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let log_path = dir.join(LOG_FILE);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        self.log = Some(BufWriter::new(file));
        self.run_dir = Some(dir);
        Ok(self)
    }

    pub fn run_dir(&self) -> Option<&Path> {
        self.run_dir.as_deref()
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            iteration: self.iteration,
            config: self.cfg.clone(),
            rng: RngState::capture(&self.rng),
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            g_opt: self.g_opt.clone(),
            d_opt: self.d_opt.clone(),
        }
    }

    fn generate(&self, tape: &Tape<T>, batch: &Batch<T>, noise: Option<&Tensor<T>>, train: bool) -> Result<Var> {
        let bound = self.generator.bind(tape, train);
        let mel = tape.constant(batch.mel.clone());
        let noise = noise.map(|n| tape.constant(n.clone()));
        Ok(self.gen_spec.generate(tape, mel, noise, &bound)?)
    }

    /// Multi-resolution STFT loss of the current generator on the fixed
    /// held-out segments.
    pub fn heldout_stft(&self) -> Result<f64> {
        let tape = Tape::new();
        let fake = self.generate(&tape, &self.heldout, self.heldout_noise.as_ref(), false)?;
        let real = tape.constant(self.heldout.wav.clone());
        let loss = multi_resolution_stft(&tape, real, fake, &self.stft)?;
        scalar(&tape, loss)
    }

    /// Saves a snapshot (when a run directory is set) and builds the error.
    fn non_finite(&self, what: &str, iteration: usize) -> Error {
        let snapshot = self.run_dir.as_ref().and_then(|dir| {
            let path = dir.join(format!("nonfinite_{iteration:07}.ckpt"));
            self.checkpoint().save(&path).ok().map(|_| path)
        });
        Error::NonFinite {
            what: what.to_string(),
            iteration,
            snapshot,
        }
    }

    /// Runs one iteration and returns its record.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let it = self.iteration;
        let number = it + 1;
        let d = &self.cfg.data;
        let batch = sample_batch(
            &self.corpus,
            &self.corpus.train,
            d.segment_length,
            d.batch_size,
            &self.features,
            &mut self.rng,
        )?;
        let noise = self
            .gen_spec
            .needs_noise()
            .then(|| Tensor::randn(batch.wav.shape(), 1.0, &mut self.rng));
        let lr_g = halving_schedule(self.g_cfg.lr, &self.cfg.trainer.generator.halve_at, it);
        let lr_d = halving_schedule(self.d_cfg.lr, &self.cfg.trainer.discriminator.halve_at, it);
        let adversarial = it >= self.cfg.trainer.d_start_iteration;

        let tape = Tape::new();
        let g_bound = self.generator.bind(&tape, true);
        let mel = tape.constant(batch.mel.clone());
        let noise_var = noise.as_ref().map(|n| tape.constant(n.clone()));
        let fake = self.gen_spec.generate(&tape, mel, noise_var, &g_bound)?;
        let real = tape.constant(batch.wav.clone());
        let stft_loss = multi_resolution_stft(&tape, real, fake, &self.stft)?;
        let stft_value = scalar(&tape, stft_loss)?;
        if !stft_value.is_finite() {
            return Err(self.non_finite("STFT loss", number));
        }

        let mut rec = IterationRecord {
            iteration: number,
            adversarial,
            g_loss: stft_value,
            stft_loss: stft_value,
            g_adv_loss: None,
            d_loss: None,
            g_grad_norm: 0.0,
            g_grad_norm_clipped: 0.0,
            d_grad_norm: None,
            d_grad_norm_clipped: None,
            real_score: None,
            fake_score: None,
            lr_g,
            lr_d,
            heldout_stft: None,
            wall_seconds: 0.0,
        };

        let g_loss = if adversarial {
            self.discriminator_step(&tape, fake, &batch, lr_d, &mut rec)?;
            let d_bound = self.discriminator.bind(&tape, false);
            let reals = discriminate(&tape, real, &self.disc_spec, &d_bound)?;
            let fakes = discriminate(&tape, fake, &self.disc_spec, &d_bound)?;
            let adv = if self.cfg.losses.prls {
                prls_adv_total_scales(&tape, &fakes, &reals, &self.prls)?
            } else {
                tape.scale(melgan_adv_loss(&tape, &fakes)?, T::of(self.prls.lambda_adv))?
            };
            rec.g_adv_loss = Some(scalar(&tape, adv)?);
            tape.add(stft_loss, adv)?
        } else {
            stft_loss
        };
        rec.g_loss = scalar(&tape, g_loss)?;
        if !rec.g_loss.is_finite() {
            return Err(self.non_finite("generator loss", number));
        }

        let mut grads = tape.backward(g_loss)?;
        let mut g_grads = self.generator.collect_grads(&g_bound, &mut grads);
        drop(grads);
        rec.g_grad_norm = match self.g_cfg.grad_clip {
            Some(max) => clip_global_norm(&mut g_grads, max),
            None => global_norm(&g_grads),
        };
        rec.g_grad_norm_clipped = global_norm(&g_grads);
        if !rec.g_grad_norm.is_finite() {
            return Err(self.non_finite("generator gradient", number));
        }
        optimizer_step(&mut self.generator, &mut self.g_opt, &g_grads, &self.g_cfg, lr_g)?;

        self.iteration = number;
        if number.is_multiple_of(self.cfg.trainer.log_interval)
            || number == self.cfg.trainer.d_start_iteration
            || number == self.cfg.trainer.total_iterations
        {
            let h = self.heldout_stft()?;
            if !h.is_finite() {
                return Err(self.non_finite("held-out STFT loss", number));
            }
            rec.heldout_stft = Some(h);
        }
        rec.wall_seconds = self.started.elapsed().as_secs_f64();
        Ok(rec)
    }

    /// One discriminator update on `batch` against the generator output
    /// `fake`, which is detached from the generator tape.
    fn discriminator_step(
        &mut self,
        g_tape: &Tape<T>,
        fake: Var,
        batch: &Batch<T>,
        lr: f64,
        rec: &mut IterationRecord,
    ) -> Result<()> {
        let tape = Tape::new();
        let bound = self.discriminator.bind(&tape, true);
        let real = tape.constant(batch.wav.clone());
        let fake = tape.constant(g_tape.value(fake)?);
        let reals = discriminate(&tape, real, &self.disc_spec, &bound)?;
        let fakes = discriminate(&tape, fake, &self.disc_spec, &bound)?;
        let loss = if self.cfg.losses.prls {
            prls_d_total_scales(&tape, &reals, &fakes, &self.prls)?
        } else {
            melgan_d_loss(&tape, &reals, &fakes)?
        };
        let value = scalar(&tape, loss)?;
        rec.d_loss = Some(value);
        rec.real_score = Some(mean_scores(&tape, &reals)?);
        rec.fake_score = Some(mean_scores(&tape, &fakes)?);
        if !value.is_finite() {
            return Err(self.non_finite("discriminator loss", rec.iteration));
        }
        let mut grads = tape.backward(loss)?;
        let mut d_grads = self.discriminator.collect_grads(&bound, &mut grads);
        let norm = match self.d_cfg.grad_clip {
            Some(max) => clip_global_norm(&mut d_grads, max),
            None => global_norm(&d_grads),
        };
        rec.d_grad_norm = Some(norm);
        rec.d_grad_norm_clipped = Some(global_norm(&d_grads));
        if !norm.is_finite() {
            return Err(self.non_finite("discriminator gradient", rec.iteration));
        }
        let cfg = self.d_cfg;
        optimizer_step(&mut self.discriminator, &mut self.d_opt, &d_grads, &cfg, lr)
    }

    fn write_log(&mut self, rec: &IterationRecord) -> Result<()> {
        if let (Some(log), Some(dir)) = (self.log.as_mut(), self.run_dir.as_ref()) {
            let line = serde_json::to_string(rec).expect("record serializes");
            writeln!(log, "{line}").map_err(|e| Error::io(dir.join(LOG_FILE), e))?;
        }
        Ok(())
    }

    fn flush_log(&mut self) -> Result<()> {
        if let (Some(log), Some(dir)) = (self.log.as_mut(), self.run_dir.as_ref()) {
            log.flush().map_err(|e| Error::io(dir.join(LOG_FILE), e))?;
        }
        Ok(())
    }

    /// Runs until `until` iterations have completed, calling `progress`
    /// after each one. Checkpoints land in the run directory at the
    /// configured interval and at the end.
    pub fn train_until(&mut self, until: usize, mut progress: impl FnMut(&IterationRecord)) -> Result<()> {
        while self.iteration < until {
            let rec = match self.step() {
                Ok(r) => r,
                Err(e) => {
                    self.flush_log()?;
                    return Err(e);
                }
            };
            self.write_log(&rec)?;
            progress(&rec);
            let every = self.cfg.trainer.checkpoint_interval;
            if let Some(dir) = self.run_dir.clone() {
                if every > 0 && rec.iteration % every == 0 {
                    self.flush_log()?;
                    self.checkpoint().save(dir.join(checkpoint_name(rec.iteration)))?;
                }
            }
            self.history.push(rec);
        }
        self.flush_log()?;
        if let Some(dir) = self.run_dir.clone() {
            self.checkpoint().save(dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(())
    }

    /// Runs to `trainer.total_iterations`.
    pub fn train(&mut self, progress: impl FnMut(&IterationRecord)) -> Result<()> {
        let total = self.cfg.trainer.total_iterations;
        self.train_until(total, progress)
    }
}
