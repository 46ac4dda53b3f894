//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL
//! line; the binary exits non-zero if any criterion fails.
//!
//! Criterion 7 trains the default desk-scale configuration and takes
//! several minutes on one core.

mod common;

use std::time::{Duration, Instant};

use prls_core::dsp::{estimate_f0, F0Config, PadMode, StftConfig};
use prls_core::gradcheck::{self, CheckOptions};
use prls_core::losses::{
    log_stft_magnitude, lsgan_adv_loss, lsgan_d_loss, multi_resolution_stft, pointwise_relativistic_g, prls_adv_total,
    prls_d_total, spectral_convergence, topk_mean, MultiStftConfig, PrlsConfig, LOG_MAG_FLOOR,
};
use prls_core::metrics::{ffe, mcd, mcd_from_cepstra, mcd_scale, MCD_COEFFS};
use prls_core::{Tape, Tensor, Var};
use prls_lab::checkpoint::Checkpoint;
use prls_lab::config::{Precision, RunConfig};
use prls_lab::trainer::{build_corpus, IterationRecord, Trainer};
use prls_lab::wav::{decode, read_wav, write_wav, AudioClip, PCM_SCALE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn val(t: &Tape<f64>, v: Var) -> f64 {
    t.item(v).unwrap()
}

fn map(t: &Tape<f64>, rows: usize, v: &[f64]) -> Var {
    t.constant(Tensor::new(&[rows, v.len() / rows], v.to_vec()).unwrap())
}

fn randn(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    Tensor::<f64>::randn(&[n], std, rng).into_data()
}

fn reduction_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = PrlsConfig {
        lambda_rls: 0.0,
        lambda_topk: 0.0,
        lambda_adv: 1.0,
        ..PrlsConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let b = rng.random_range(1..5);
        let n = rng.random_range(1..200);
        let t = Tape::new();
        let real = map(&t, b, &randn(&mut rng, b * n, 1.5));
        let fake = map(&t, b, &randn(&mut rng, b * n, 1.5));
        let d = val(&t, prls_d_total(&t, real, fake, &cfg).unwrap()) - val(&t, lsgan_d_loss(&t, real, fake).unwrap());
        let g = val(&t, prls_adv_total(&t, fake, real, &cfg).unwrap()) - val(&t, lsgan_adv_loss(&t, fake).unwrap());
        worst = worst.max(d.abs()).max(g.abs());
    }
    let elapsed = start.elapsed();
    ensure(
        worst <= 1e-12 && elapsed < Duration::from_secs(1),
        format!("max |difference| {worst:.1e} over 100 map pairs in {elapsed:.2?}"),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let reports = gradcheck::run("all", 0, &CheckOptions::default()).map_err(err)?;
    let elapsed = start.elapsed();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let detail = format!(
        "{} checks x 100 points, worst rel err {worst:.2e}, {elapsed:.0?}{}",
        reports.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    ensure(failed.is_empty() && elapsed < Duration::from_secs(300), detail)
}

fn pointwise_witness() -> Outcome {
    let t = Tape::new();
    let real = map(&t, 1, &[1.0, 1.0]);
    let flat = map(&t, 1, &[0.5, 0.5]);
    let uneven = map(&t, 1, &[0.9, 0.3]);
    let lsgan_of = |f: Var| val(&t, lsgan_adv_loss(&t, f).unwrap());
    let rel_of = |f: Var| val(&t, t.mean(pointwise_relativistic_g(&t, f, real, 1.0).unwrap()).unwrap());
    let (m1, m2) = (lsgan_of(flat), lsgan_of(uneven));
    let (r1, r2) = (rel_of(flat), rel_of(uneven));
    // 0.9 and 0.3 are not binary fractions, so "exact" means within one ulp.
    let ulp = |want: f64, got: f64| (want - got).abs() <= f64::EPSILON * want;
    ensure(
        m1 == 0.25 && ulp(0.25, m2) && r1 == 2.25 && ulp(2.05, r2),
        format!("mean (1 - D(G))^2: {m1} vs {m2}; relativistic means: {r1} vs {r2}"),
    )
}

fn topk_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut full_exact = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..300);
        let v = randn(&mut rng, n, 2.0);
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        for kf in [0.1, 0.5, 1.0] {
            let t = Tape::new();
            let got = val(&t, topk_mean(&t, t.constant(Tensor::from_slice(&v)), kf).unwrap());
            let k = ((kf * n as f64).ceil() as usize).clamp(1, n);
            let want = sorted[..k].iter().sum::<f64>() / k as f64;
            worst = worst.max((got - want).abs());
            if kf == 1.0 {
                let plain = val(&t, t.mean(t.constant(Tensor::from_slice(&v))).unwrap());
                full_exact &= got == plain;
            }
        }
    }
    ensure(
        worst <= 1e-12 && full_exact,
        format!("max deviation from sort-then-average {worst:.1e}; k_fraction 1 equals mean exactly: {full_exact}"),
    )
}

fn stft_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = randn(&mut rng, 4096, 0.3);
    let t = Tape::new();
    let xv = t.constant(Tensor::from_slice(&x));
    let zero = t.constant(Tensor::zeros(&[4096]));
    let scaled = t.constant(Tensor::from_slice(&x.iter().map(|v| v * std::f64::consts::E).collect::<Vec<_>>()));
    let cfg = StftConfig {
        fft_size: 1024,
        win_length: 600,
        hop: 120,
        padding: PadMode::Center,
    };
    let mags = t.value(t.stft_magnitude(xv, &cfg).unwrap()).unwrap();
    let min_mag = mags.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let self_loss = val(&t, multi_resolution_stft(&t, xv, xv, &MultiStftConfig::default()).unwrap());
    let sc_zero = val(&t, spectral_convergence(&t, xv, zero, &cfg).unwrap());
    let mag_e = val(&t, log_stft_magnitude(&t, xv, scaled, &cfg).unwrap());
    ensure(
        self_loss.abs() <= 1e-9 && sc_zero == 1.0 && (mag_e - 1.0).abs() <= 1e-6 && min_mag > LOG_MAG_FLOOR,
        format!("L_stft(x,x) = {self_loss:.1e}; L_sc(x,0) = {sc_zero}; L_mag(x,e*x) = {mag_e:.9} (min |X| {min_mag:.1e})"),
    )
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = randn(&mut rng, 22050, 0.2);
    let f0 = F0Config::default();
    let mcd_self = mcd(&x, &x, &Default::default()).map_err(err)?;
    let tone: Vec<f64> = (0..22050)
        .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / 22050.0).sin())
        .collect();
    let ffe_self = ffe(&tone, &tone, &f0).map_err(err)?;

    // Two cepstra differing in a single coefficient by delta.
    let frames = 7;
    let delta = 0.37;
    let a = Tensor::new(&[MCD_COEFFS, frames], randn(&mut rng, MCD_COEFFS * frames, 1.0)).unwrap();
    let mut b = a.clone();
    for f in 0..frames {
        b.data_mut()[3 * frames + f] += delta;
    }
    let closed = mcd_scale() * (2.0f64).sqrt() * delta;
    let got = mcd_from_cepstra(&a, &b).map_err(err)?;

    let track = estimate_f0(&tone, &f0);
    let interior: Vec<(f64, bool)> = track
        .f0
        .iter()
        .cloned()
        .zip(track.voiced.iter().cloned())
        .skip(1)
        .take(track.len().saturating_sub(2))
        .collect();
    let good = interior.iter().filter(|(f, v)| *v && (f - 220.0).abs() <= 2.0).count();
    let share = good as f64 / interior.len() as f64;
    ensure(
        mcd_self == 0.0 && ffe_self == 0.0 && (got - closed).abs() <= 1e-9 && share >= 0.9,
        format!(
            "mcd(x,x) = {mcd_self}, ffe(x,x) = {ffe_self}, single-coefficient MCD off by {:.1e}, 220 Hz tracked on {:.1}% of interior frames",
            (got - closed).abs(),
            100.0 * share
        ),
    )
}

fn desk_training() -> Outcome {
    let cfg = RunConfig::default();
    let start = Instant::now();
    let corpus = build_corpus(&cfg).map_err(err)?;
    let mut trainer = Trainer::<f32>::new(cfg.clone(), corpus).map_err(err)?;
    trainer.train(|_| {}).map_err(err)?;
    let elapsed = start.elapsed();
    let h = &trainer.history;
    let at = |n: usize| h.iter().find(|r| r.iteration == n).and_then(|r| r.heldout_stft);
    let first = at(10).ok_or("no held-out loss at iteration 10")?;
    let pretrained = at(cfg.trainer.d_start_iteration).ok_or("no held-out loss at the end of pretraining")?;
    let finite = h.iter().all(|r| common::numbers(r).into_iter().flatten().all(f64::is_finite));
    let tail: Vec<f64> = h.iter().rev().take(100).filter_map(|r| r.real_score).collect();
    let real_mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    let ratio = pretrained / first;
    ensure(
        ratio < 0.5 && finite && tail.len() == 100 && (0.0..=2.0).contains(&real_mean) && elapsed < Duration::from_secs(1800),
        format!(
            "held-out L_stft {first:.3} at 10 -> {pretrained:.3} at {} (ratio {ratio:.3}); all finite: {finite}; mean real score over last 100: {real_mean:.3}; {:.1} min",
            cfg.trainer.d_start_iteration,
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

fn history(cfg: &RunConfig) -> Result<Vec<IterationRecord>, String> {
    let corpus = build_corpus(cfg).map_err(err)?;
    let mut t = Trainer::<f32>::new(cfg.clone(), corpus).map_err(err)?;
    t.train(|_| {}).map_err(err)?;
    Ok(t.history)
}

fn baseline_differential() -> Outcome {
    let mut prls = RunConfig::default();
    prls.trainer.d_start_iteration = 200;
    prls.trainer.total_iterations = 205;
    let mut base = prls.clone();
    base.losses.prls = false;
    let a = history(&prls)?;
    let b = history(&base)?;
    let d_start = prls.trainer.d_start_iteration;
    let pre_identical = a[..d_start]
        .iter()
        .zip(&b[..d_start])
        .all(|(x, y)| common::numbers(x).iter().zip(common::numbers(y)).all(|(p, q)| p.map(f64::to_bits) == q.map(f64::to_bits)));
    let differs = a[d_start..].iter().zip(&b[d_start..]).all(|(x, y)| x.d_loss != y.d_loss);
    ensure(
        pre_identical && differs,
        format!(
            "pretraining bit-identical over {d_start} iterations: {pre_identical}; D loss at first adversarial iteration {:.6} (PRLS) vs {:.6} (LSGAN), differing on every adversarial iteration: {differs}",
            a[d_start].d_loss.unwrap_or(f64::NAN),
            b[d_start].d_loss.unwrap_or(f64::NAN)
        ),
    )
}

fn determinism_and_resume() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.trainer.total_iterations = 10;
    cfg.trainer.d_start_iteration = 5;
    let a = history(&cfg)?;
    let b = history(&cfg)?;
    let same = a.iter().zip(&b).all(|(x, y)| common::numbers(x) == common::numbers(y)) && a.len() == 10;

    let mut small = common::tiny_config();
    small.trainer.precision = Precision::F64;
    let corpus = build_corpus(&small).map_err(err)?;
    let mut full = Trainer::<f64>::new(small.clone(), corpus.clone()).map_err(err)?;
    full.train(|_| {}).map_err(err)?;
    let mut first = Trainer::<f64>::new(small.clone(), corpus.clone()).map_err(err)?;
    first.train_until(8, |_| {}).map_err(err)?;
    let bytes = first.checkpoint().to_bytes();
    let ckpt = Checkpoint::<f64>::from_bytes(&bytes, std::path::Path::new("memory")).map_err(err)?;
    let mut resumed = Trainer::resume(ckpt, corpus).map_err(err)?;
    resumed.train(|_| {}).map_err(err)?;
    let mut worst: f64 = 0.0;
    for (x, y) in full.history[8..].iter().zip(&resumed.history) {
        for (p, q) in common::numbers(x).into_iter().zip(common::numbers(y)) {
            match (p, q) {
                (Some(p), Some(q)) => worst = worst.max((p - q).abs()),
                (None, None) => {}
                _ => worst = f64::INFINITY,
            }
        }
    }
    for (p, q) in full.generator.iter().zip(resumed.generator.iter()) {
        for (u, v) in p.value.data().iter().zip(q.value.data()) {
            worst = worst.max((u - v).abs());
        }
    }
    ensure(
        same && worst <= 1e-12 && resumed.history.len() == full.history.len() - 8,
        format!("first 10 iterations identical across runs: {same}; resume at 8 of 12 (64-bit) max deviation {worst:.1e}"),
    )
}

fn wav_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let samples: Vec<f64> = (0..5000).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let clip = AudioClip::new("rt", 22050, samples).map_err(err)?;
    let path = dir.path().join("rt.wav");
    write_wav(&path, &clip).map_err(err)?;
    let back = read_wav(&path).map_err(err)?;
    let worst = clip.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let fixture = pcm16_fixture(&[0, 16384, -16384, 32767]);
    let decoded = decode(std::io::Cursor::new(fixture), "fixture", std::path::Path::new("fixture.wav")).map_err(err)?;
    let expected = [0.0, 0.5, -0.5, 32767.0 / 32768.0];
    ensure(
        worst <= 1.0 / PCM_SCALE && back.len() == clip.len() && decoded.samples == expected,
        format!("round-trip max error {:.3} quantization steps; fixture decodes to {:?}", worst * PCM_SCALE, decoded.samples),
    )
}

/// 44-byte canonical header, mono, 22050 Hz, PCM16.
fn pcm16_fixture(codes: &[i16]) -> Vec<u8> {
    let data = (codes.len() * 2) as u32;
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    {
        let v = 16u32;
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&22050u32.to_le_bytes());
    b.extend_from_slice(&44100u32.to_le_bytes());
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data.to_le_bytes());
    for c in codes {
        b.extend_from_slice(&c.to_le_bytes());
    }
    b
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("reduction equivalence", reduction_equivalence),
        ("gradient suite", gradient_suite),
        ("pointwise-sensitivity witness", pointwise_witness),
        ("top-K oracle", topk_oracle),
        ("STFT-loss identities", stft_identities),
        ("metric identities", metric_identities),
        ("desk-scale training trend", desk_training),
        ("baseline vs PRLS differential", baseline_differential),
        ("determinism and resume", determinism_and_resume),
        ("WAV round-trip", wav_round_trip),
    ];
    // `cargo test -- <filter>` style selection by criterion number.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n:>2} ({name}): {detail} [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {n:>2} ({name}): {detail} [{secs:.1}s]");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
