mod common;

use prls_lab::checkpoint::Checkpoint;
use prls_lab::config::RunConfig;
use prls_lab::trainer::{build_corpus, checkpoint_name, IterationRecord, Trainer, FINAL_CHECKPOINT, LOG_FILE};
use prls_lab::Error;

fn run<T: prls_core::Real>(cfg: &RunConfig) -> Trainer<T> {
    let corpus = build_corpus(cfg).unwrap();
    let mut t = Trainer::<T>::new(cfg.clone(), corpus).unwrap();
    t.train(|_| {}).unwrap();
    t
}

fn same_numbers(a: &[IterationRecord], b: &[IterationRecord]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            common::numbers(x)
                .into_iter()
                .zip(common::numbers(y))
                .all(|(p, q)| p.map(f64::to_bits) == q.map(f64::to_bits))
        })
}

#[test]
fn runs_are_deterministic() {
    let cfg = common::tiny_config();
    let a = run::<f32>(&cfg);
    let b = run::<f32>(&cfg);
    assert!(same_numbers(&a.history, &b.history));
    assert_eq!(a.generator, b.generator);
    assert_eq!(a.discriminator, b.discriminator);

    let mut other = cfg.clone();
    other.trainer.seed = 1;
    assert!(!same_numbers(&a.history, &run::<f32>(&other).history));
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let cfg = common::tiny_config();
    let full = run::<f32>(&cfg);
    for stop in [3, 6, 9] {
        let corpus = build_corpus(&cfg).unwrap();
        let mut first = Trainer::<f32>::new(cfg.clone(), corpus.clone()).unwrap();
        first.train_until(stop, |_| {}).unwrap();
        let mut second = Trainer::resume(first.checkpoint(), corpus).unwrap();
        second.train(|_| {}).unwrap();
        assert!(same_numbers(&full.history[stop..], &second.history), "stop at {stop}");
        assert_eq!(full.checkpoint(), second.checkpoint());
    }
}

#[test]
fn records_follow_the_schedule() {
    let cfg = common::tiny_config();
    let t = run::<f32>(&cfg);
    let d_start = cfg.trainer.d_start_iteration;
    assert_eq!(t.history.len(), cfg.trainer.total_iterations);
    for (i, r) in t.history.iter().enumerate() {
        let n = i + 1;
        assert_eq!(r.iteration, n);
        assert_eq!(r.adversarial, n > d_start);
        assert_eq!(r.d_loss.is_some(), r.adversarial);
        assert_eq!(r.g_adv_loss.is_some(), r.adversarial);
        let scored = n % cfg.trainer.log_interval == 0 || n == d_start || n == cfg.trainer.total_iterations;
        assert_eq!(r.heldout_stft.is_some(), scored, "iteration {n}");
        assert!(common::numbers(r).into_iter().flatten().all(f64::is_finite));
        if !r.adversarial {
            assert_eq!(r.g_loss, r.stft_loss);
        }
    }
}

#[test]
fn pretraining_leaves_the_discriminator_untouched() {
    let mut cfg = common::tiny_config();
    cfg.trainer.total_iterations = cfg.trainer.d_start_iteration;
    let t = run::<f32>(&cfg);
    let initial = cfg.model.discriminator().init_params::<f32>(cfg.trainer.seed + 1).unwrap();
    assert_eq!(t.discriminator, initial);
    assert_eq!(t.d_opt.step, 0);
    assert_eq!(t.g_opt.step, cfg.trainer.d_start_iteration as u64);
}

#[test]
fn baseline_and_prls_share_pretraining_then_diverge() {
    let cfg = common::tiny_config();
    let mut base = cfg.clone();
    base.losses.prls = false;
    let a = run::<f32>(&cfg);
    let b = run::<f32>(&base);
    let d_start = cfg.trainer.d_start_iteration;
    assert!(same_numbers(&a.history[..d_start], &b.history[..d_start]));
    assert_ne!(a.history[d_start].d_loss, b.history[d_start].d_loss);
}

#[test]
fn zero_relativistic_weights_reproduce_the_baseline_exactly() {
    let mut cfg = common::tiny_config();
    cfg.losses.lambda_rls = 0.0;
    cfg.losses.lambda_topk = 0.0;
    cfg.losses.lambda_adv = 1.0;
    let mut base = cfg.clone();
    base.losses.prls = false;
    let a = run::<f64>(&cfg);
    let b = run::<f64>(&base);
    assert!(same_numbers(&a.history, &b.history));
    assert_eq!(a.generator, b.generator);
    assert_eq!(a.discriminator, b.discriminator);
}

#[test]
fn clipping_bounds_the_applied_discriminator_norm() {
    let mut cfg = common::tiny_config();
    cfg.trainer.discriminator.grad_clip = 1e-3;
    cfg.trainer.generator.grad_clip = 0.5;
    let t = run::<f32>(&cfg);
    for r in &t.history {
        assert!(r.g_grad_norm_clipped <= 0.5 + 1e-9);
        assert!(r.g_grad_norm_clipped <= r.g_grad_norm + 1e-9);
        if let (Some(raw), Some(clipped)) = (r.d_grad_norm, r.d_grad_norm_clipped) {
            assert!(clipped <= 1e-3 + 1e-12, "{clipped}");
            assert!(raw > clipped);
        }
    }
}

#[test]
fn run_directory_gets_a_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config();
    cfg.trainer.checkpoint_interval = 5;
    let corpus = build_corpus(&cfg).unwrap();
    let mut t = Trainer::<f32>::new(cfg.clone(), corpus).unwrap().with_run_dir(dir.path()).unwrap();
    t.train(|_| {}).unwrap();
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let records: Vec<IterationRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(same_numbers(&records, &t.history));
    for name in [checkpoint_name(5), checkpoint_name(10), FINAL_CHECKPOINT.to_string()] {
        assert!(dir.path().join(&name).exists(), "{name}");
    }
    assert!(!dir.path().join(checkpoint_name(12)).exists());
    let last = Checkpoint::<f32>::load(dir.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(last, t.checkpoint());
}

#[test]
fn divergence_stops_training_and_leaves_a_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config();
    cfg.trainer.generator.lr = 1e30;
    let corpus = build_corpus(&cfg).unwrap();
    let mut t = Trainer::<f32>::new(cfg, corpus).unwrap().with_run_dir(dir.path()).unwrap();
    let err = t.train(|_| {}).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let Error::NonFinite { snapshot, iteration, .. } = err else {
        panic!("expected a non-finite error, got {err}");
    };
    let snapshot = snapshot.expect("snapshot written");
    assert!(snapshot.exists());
    let saved = Checkpoint::<f32>::load(&snapshot).unwrap();
    assert_eq!(saved.iteration + 1, iteration);
    assert!(!dir.path().join(FINAL_CHECKPOINT).exists());
}

#[test]
fn invalid_configurations_are_refused() {
    let mut cfg = common::tiny_config();
    cfg.data.segment_length = 1000;
    cfg.trainer.d_start_iteration = 100;
    let corpus = build_corpus(&common::tiny_config()).unwrap();
    let Err(Error::Config(problems)) = Trainer::<f32>::new(cfg, corpus) else {
        panic!("expected a configuration error");
    };
    assert!(problems.len() >= 2, "{problems:?}");
}
