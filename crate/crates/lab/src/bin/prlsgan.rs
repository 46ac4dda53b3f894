use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use prls_core::gradcheck::{self, CheckOptions};
use prls_core::{DType, Real};
use prls_lab::checkpoint::{read_header, Checkpoint};
use prls_lab::config::{Precision, RunConfig, DEFAULT_CONFIG_TOML};
use prls_lab::corpus::{default_test_count, synth_corpus, wav_files};
use prls_lab::error::{Error, Result};
use prls_lab::eval::{evaluate_dirs, write_report};
use prls_lab::synth::Vocoder;
use prls_lab::trainer::{build_corpus, IterationRecord, Trainer};
use prls_lab::wav::{read_wav, write_wav, DEFAULT_SAMPLE_RATE};

/// GAN vocoder training with pointwise relativistic least-squares losses.
#[derive(Parser)]
#[command(name = "prlsgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic harmonic corpus (WAV files plus manifest.json).
    MakeData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
        /// Total clips; one in nine (at least one) is held out for testing.
        #[arg(long, default_value_t = 72)]
        clips: usize,
        #[arg(long, default_value_t = 2.0)]
        seconds: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE)]
        sample_rate: u32,
    },
    /// Train a vocoder; writes train_log.jsonl and checkpoints to --out.
    Train {
        /// TOML run configuration; defaults apply to any missing key.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides losses.prls; `off` trains the plain LSGAN baseline.
        #[arg(long, value_enum)]
        prls: Option<Switch>,
        /// Overrides trainer.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides trainer.total_iterations.
        #[arg(long)]
        iterations: Option<usize>,
        /// Overrides trainer.precision.
        #[arg(long, value_enum)]
        precision: Option<PrecisionArg>,
        /// Continue from a checkpoint; its stored configuration is used.
        #[arg(long, conflicts_with_all = ["config", "prls", "seed", "precision"])]
        resume: Option<PathBuf>,
    },
    /// Copy-synthesis: resynthesize WAV files from their own mel spectrograms.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A WAV file or a folder of them.
        #[arg(long)]
        mel_from: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seeds the noise input of generators that take one.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score synthesized clips against references with matching file names.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long = "syn")]
        synthesized: PathBuf,
        /// Folder receiving eval.json and eval.csv.
        #[arg(long)]
        out: PathBuf,
        /// Optional run configuration supplying the [metrics] section.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable loss and model.
    Gradcheck {
        /// A check name, or `all`.
        #[arg(long, default_value = "all")]
        which: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Negate every analytic gradient; the check must then fail.
        #[arg(long)]
        flip_sign: bool,
    },
    /// Print the default configuration file.
    DefaultConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::MakeData {
            out,
            seed,
            clips,
            seconds,
            sample_rate,
        } => {
            let corpus = synth_corpus(seed, clips, seconds, default_test_count(clips), sample_rate)?;
            corpus.save(&out)?;
            println!(
                "wrote {} clips ({} train, {} test) to {}",
                corpus.clips.len(),
                corpus.train.len(),
                corpus.test.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            out,
            prls,
            seed,
            iterations,
            precision,
            resume,
        } => {
            if let Some(ckpt) = resume {
                let header = read_header(&ckpt)?;
                return match header.dtype {
                    DType::F32 => resume_training::<f32>(&ckpt, &out, iterations),
                    DType::F64 => resume_training::<f64>(&ckpt, &out, iterations),
                };
            }
            let mut cfg = match config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::default(),
            };
            if let Some(p) = prls {
                cfg.losses.prls = matches!(p, Switch::On);
            }
            if let Some(s) = seed {
                cfg.trainer.seed = s;
            }
            if let Some(n) = iterations {
                cfg.trainer.total_iterations = n;
            }
            if let Some(p) = precision {
                cfg.trainer.precision = match p {
                    PrecisionArg::F32 => Precision::F32,
                    PrecisionArg::F64 => Precision::F64,
                };
            }
            cfg.validate()?;
            match cfg.trainer.precision {
                Precision::F32 => fresh_training::<f32>(cfg, &out),
                Precision::F64 => fresh_training::<f64>(cfg, &out),
            }
        }
        Command::Synth {
            checkpoint,
            mel_from,
            out,
            seed,
        } => match read_header(&checkpoint)?.dtype {
            DType::F32 => synthesize::<f32>(&checkpoint, &mel_from, &out, seed),
            DType::F64 => synthesize::<f64>(&checkpoint, &mel_from, &out, seed),
        },
        Command::Eval {
            reference,
            synthesized,
            out,
            config,
        } => {
            let cfg = match config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::default(),
            };
            let report = evaluate_dirs(&reference, &synthesized, &cfg.metrics)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_report(&report, &out.join("eval.json"), &out.join("eval.csv"))?;
            println!(
                "{} pairs: MCD {:.3} ± {:.3} dB, FFE {:.4} ± {:.4}",
                report.pairs.len(),
                report.mcd.mean,
                report.mcd.std,
                report.ffe.mean,
                report.ffe.std
            );
            if !report.unmatched.is_empty() {
                println!("unmatched: {}", report.unmatched.join(", "));
            }
            Ok(())
        }
        Command::Gradcheck {
            which,
            seed,
            points,
            eps,
            tol,
            flip_sign,
        } => {
            let opts = CheckOptions {
                eps,
                tol,
                points,
                flip_sign,
                ..CheckOptions::default()
            };
            let reports = gradcheck::run(&which, seed, &opts).map_err(|e| Error::Config(vec![e.to_string()]))?;
            let mut failed = Vec::new();
            for r in &reports {
                println!(
                    "{:<8} {:<28} max rel err {:.3e} (tol {:.0e}) over {} points, {} coords checked, {} skipped",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_rel_err,
                    r.tol,
                    r.points,
                    r.coords_checked,
                    r.coords_skipped
                );
                if !r.passed {
                    failed.push(r.name.clone());
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Error::GradCheck(failed.join(", ")))
            }
        }
        Command::DefaultConfig => {
            print!("{DEFAULT_CONFIG_TOML}");
            Ok(())
        }
    }
}

fn report_progress(log_interval: usize) -> impl FnMut(&IterationRecord) {
    move |r| {
        if r.iteration % log_interval != 0 && r.heldout_stft.is_none() {
            return;
        }
        let mut line = format!("iter {:>7}  stft {:.4}", r.iteration, r.stft_loss);
        if let Some(h) = r.heldout_stft {
            line += &format!("  held-out {h:.4}");
        }
        if let (Some(d), Some(a)) = (r.d_loss, r.g_adv_loss) {
            line += &format!("  d {d:.4}  g_adv {a:.4}");
        }
        if let (Some(real), Some(fake)) = (r.real_score, r.fake_score) {
            line += &format!("  D(x) {real:.3}  D(G) {fake:.3}");
        }
        line += &format!("  {:.0}s", r.wall_seconds);
        eprintln!("{line}");
    }
}

fn fresh_training<T: Real>(cfg: RunConfig, out: &Path) -> Result<()> {
    let corpus = build_corpus(&cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let log_interval = cfg.trainer.log_interval;
    let mut trainer = Trainer::<T>::new(cfg, corpus)?.with_run_dir(out)?;
    trainer.train(report_progress(log_interval))?;
    println!("finished {} iterations; checkpoints in {}", trainer.iteration, out.display());
    Ok(())
}

fn resume_training<T: Real>(ckpt: &Path, out: &Path, iterations: Option<usize>) -> Result<()> {
    let mut state = Checkpoint::<T>::load(ckpt)?;
    if let Some(n) = iterations {
        state.config.trainer.total_iterations = n;
        state.config.validate()?;
    }
    let corpus = build_corpus(&state.config)?;
    let log_interval = state.config.trainer.log_interval;
    let mut trainer = Trainer::resume(state, corpus)?.with_run_dir(out)?;
    trainer.train(report_progress(log_interval))?;
    println!("finished {} iterations; checkpoints in {}", trainer.iteration, out.display());
    Ok(())
}

fn synthesize<T: Real>(checkpoint: &Path, input: &Path, out: &Path, seed: u64) -> Result<()> {
    let state = Checkpoint::<T>::load(checkpoint)?;
    let vocoder = Vocoder::new(&state.config, state.generator)?;
    let inputs = if input.is_dir() {
        wav_files(input)?
    } else {
        vec![input.to_path_buf()]
    };
    if inputs.is_empty() {
        return Err(Error::Corpus(format!("no .wav files in {}", input.display())));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (i, path) in inputs.iter().enumerate() {
        let clip = read_wav(path)?;
        let y = vocoder.copy_synthesize(&clip, seed.wrapping_add(i as u64))?;
        write_wav(out.join(format!("{}.wav", y.id)), &y)?;
    }
    println!("synthesized {} files into {}", inputs.len(), out.display());
    Ok(())
}
