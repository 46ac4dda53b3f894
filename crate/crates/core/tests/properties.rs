//! Cross-module invariants checked on random inputs.

use prls_core::dsp::{estimate_f0, stft_magnitude, F0Config, MelConfig, MelFilterbank, PadMode, StftConfig};
use prls_core::gradcheck::{tiny_discriminator, tiny_melgan, tiny_pwgan};
use prls_core::losses::{
    lsgan_adv_loss, lsgan_d_loss, melgan_adv_loss, melgan_d_loss, prls_adv_total, prls_adv_total_scales, prls_d_total,
    prls_d_total_scales, PrlsConfig,
};
use prls_core::metrics::{ffe, mcd};
use prls_core::models::{discriminate, GeneratorSpec, MelGanSpec};
use prls_core::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const REDUCED: PrlsConfig = PrlsConfig {
    lambda_rls: 0.0,
    margin: 1.0,
    lambda_adv: 1.0,
    lambda_topk: 0.0,
    k_fraction: 0.1,
    enabled_after: 0,
};

fn map(t: &Tape<f64>, b: usize, n: usize, v: &[f64]) -> Var {
    t.constant(Tensor::new(&[b, n], v.to_vec()).unwrap())
}

fn val(t: &Tape<f64>, v: Var) -> f64 {
    t.item(v).unwrap()
}

fn sine(freq: f64, sr: f64, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin()).collect()
}

fn score_maps() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..4, 1usize..40).prop_flat_map(|(b, n)| {
        (
            Just(b),
            Just(n),
            proptest::collection::vec(-3.0f64..3.0, b * n),
            proptest::collection::vec(-3.0f64..3.0, b * n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_relativistic_weights_reduce_to_lsgan((b, n, r, f) in score_maps()) {
        let t = Tape::new();
        let (rv, fv) = (map(&t, b, n, &r), map(&t, b, n, &f));
        let d_new = val(&t, prls_d_total(&t, rv, fv, &REDUCED).unwrap());
        let d_old = val(&t, lsgan_d_loss(&t, rv, fv).unwrap());
        let g_new = val(&t, prls_adv_total(&t, fv, rv, &REDUCED).unwrap());
        let g_old = val(&t, lsgan_adv_loss(&t, fv).unwrap());
        prop_assert_eq!(d_new, d_old);
        prop_assert_eq!(g_new, g_old);
    }

    #[test]
    fn multiscale_reduction_holds_per_scale((b, n, r, f) in score_maps(), n2 in 1usize..20, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r2 = Tensor::<f64>::randn(&[b * n2], 1.0, &mut rng).into_data();
        let f2 = Tensor::<f64>::randn(&[b * n2], 1.0, &mut rng).into_data();
        let t = Tape::new();
        let reals = [map(&t, b, n, &r), map(&t, b, n2, &r2)];
        let fakes = [map(&t, b, n, &f), map(&t, b, n2, &f2)];
        prop_assert_eq!(
            val(&t, prls_d_total_scales(&t, &reals, &fakes, &REDUCED).unwrap()),
            val(&t, melgan_d_loss(&t, &reals, &fakes).unwrap())
        );
        prop_assert_eq!(
            val(&t, prls_adv_total_scales(&t, &fakes, &reals, &REDUCED).unwrap()),
            val(&t, melgan_adv_loss(&t, &fakes).unwrap())
        );
    }

    #[test]
    fn gradient_of_doubled_function_is_doubled(x in proptest::collection::vec(-2.0f64..2.0, 1..30)) {
        let f = |t: &Tape<f64>, v: Var| t.sum(t.mul(t.tanh(v).unwrap(), t.square(v).unwrap()).unwrap()).unwrap();
        let t1 = Tape::new();
        let v1 = t1.leaf(Tensor::from_slice(&x), true);
        let l1 = f(&t1, v1);
        let single = t1.backward(l1).unwrap().get(v1).unwrap().clone();
        let t2 = Tape::new();
        let v2 = t2.leaf(Tensor::from_slice(&x), true);
        let loss = t2.add(f(&t2, v2), f(&t2, v2)).unwrap();
        let double = t2.backward(loss).unwrap().get(v2).unwrap().clone();
        for (a, b) in single.data().iter().zip(double.data()) {
            // Contributions may be summed in a different order, so allow rounding.
            prop_assert!((2.0 * a - b).abs() <= 1e-14 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn stft_magnitude_is_positively_homogeneous(
        x in proptest::collection::vec(-1.0f64..1.0, 600..1200),
        a in 0.01f64..20.0,
    ) {
        let cfg = StftConfig { fft_size: 256, win_length: 200, hop: 64, padding: PadMode::Center };
        let m = stft_magnitude(&Tensor::from_slice(&x), &cfg).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| a * v).collect();
        let ms = stft_magnitude(&Tensor::from_slice(&scaled), &cfg).unwrap();
        prop_assert_eq!(m.shape(), ms.shape());
        let peak = m.data().iter().fold(0.0f64, |p, v| p.max(*v));
        for (u, v) in m.data().iter().zip(ms.data()) {
            prop_assert!((a * u - v).abs() <= 1e-9 * a * peak.max(1.0));
        }
    }

    #[test]
    fn sine_pitch_is_tracked_within_two_percent(freq in 100.0f64..400.0, amp in 0.05f64..1.0) {
        let cfg = F0Config::default();
        let x = sine(freq, cfg.sample_rate as f64, 22050 / 2, amp);
        let track = estimate_f0(&x, &cfg);
        let voiced: Vec<f64> = track.f0.iter().zip(&track.voiced).filter(|(_, &v)| v).map(|(f, _)| *f).collect();
        prop_assert!(voiced.len() * 10 >= track.len() * 9);
        let good = voiced.iter().filter(|&&f| (f - freq).abs() <= 0.02 * freq).count();
        prop_assert!(good * 10 >= voiced.len() * 9, "{good}/{}", voiced.len());
    }

    #[test]
    fn mcd_is_symmetric(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::<f64>::randn(&[4096], 0.3, &mut rng).into_data();
        let b = Tensor::<f64>::randn(&[4096], 0.3, &mut rng).into_data();
        let cfg = MelConfig::default();
        prop_assert_eq!(mcd(&a, &b, &cfg).unwrap(), mcd(&b, &a, &cfg).unwrap());
        prop_assert_eq!(mcd(&a, &a, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn silencing_stretches_never_lowers_ffe(start in 0usize..8000, len in 0usize..6000, start2 in 0usize..8000) {
        let cfg = F0Config::default();
        let reference = sine(180.0, 22050.0, 11025, 0.5);
        let mut syn = sine(185.0, 22050.0, 11025, 0.5);
        let before = ffe(&reference, &syn, &cfg).unwrap();
        let end = (start + len).min(syn.len());
        syn[start..end].fill(0.0);
        let after = ffe(&reference, &syn, &cfg).unwrap();
        prop_assert!(after >= before);
        let end2 = (start2 + len / 2).min(syn.len());
        syn[start2..end2].fill(0.0);
        prop_assert!(ffe(&reference, &syn, &cfg).unwrap() >= after);
    }

    #[test]
    fn melgan_output_is_frames_times_hop(frames in 1usize..=64) {
        let spec = GeneratorSpec::MelGan(MelGanSpec { base_channels: 16, ..MelGanSpec::default() });
        let p = spec.init_params::<f32>(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(frames as u64);
        let t = Tape::new();
        let mel = t.constant(Tensor::randn(&[1, 80, frames], 2.0, &mut rng));
        let y = spec.generate(&t, mel, None, &p.bind(&t, false)).unwrap();
        let out = t.value(y).unwrap();
        prop_assert_eq!(out.shape(), &[1, 1, frames * 256][..]);
        prop_assert!(out.is_finite());
    }
}

#[test]
fn mel_filters_are_nonnegative_and_peak_at_their_centres() {
    let cfg = MelConfig::default();
    let fb = MelFilterbank::<f64>::from_config(&cfg).unwrap();
    let bins = cfg.stft.fft_size / 2 + 1;
    let hz_per_bin = cfg.sample_rate as f64 / cfg.stft.fft_size as f64;
    assert!(fb.weights.data().iter().all(|&w| w >= 0.0));
    for (m, centre) in fb.centers().iter().enumerate() {
        let row = fb.weights.row(m);
        let peak = (0..bins).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert!(
            (peak as f64 * hz_per_bin - centre).abs() <= hz_per_bin,
            "band {m}: peak bin {peak}, centre {centre} Hz"
        );
    }
}

/// A full generator-plus-discriminator pass reaches every parameter.
#[test]
fn every_parameter_receives_a_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let disc = tiny_discriminator(2);
    for gen in [GeneratorSpec::MelGan(tiny_melgan()), GeneratorSpec::PwGan(tiny_pwgan())] {
        let gp = gen.init_params::<f64>(1).unwrap();
        let dp = disc.init_params::<f64>(2).unwrap();
        let frames = 128;
        let len = frames * gen.hop();
        let t = Tape::new();
        let gb = gp.bind(&t, true);
        let db = dp.bind(&t, true);
        let mel = t.constant(Tensor::randn(&[2, gen.n_mels(), frames], 1.0, &mut rng));
        let noise = gen
            .needs_noise()
            .then(|| t.constant(Tensor::randn(&[2, 1, len], 1.0, &mut rng)));
        let fake = gen.generate(&t, mel, noise, &gb).unwrap();
        let real = t.constant(Tensor::randn(&[2, 1, len], 0.3, &mut rng));
        let reals = discriminate(&t, real, &disc, &db).unwrap();
        let fakes = discriminate(&t, fake, &disc, &db).unwrap();
        let loss = t
            .add(
                prls_d_total_scales(&t, &reals, &fakes, &PrlsConfig::default()).unwrap(),
                prls_adv_total_scales(&t, &fakes, &reals, &PrlsConfig::default()).unwrap(),
            )
            .unwrap();
        let mut grads = t.backward(loss).unwrap();
        for (params, bound) in [(&gp, &gb), (&dp, &db)] {
            for (p, &v) in params.iter().zip(bound.vars()) {
                let g = grads.take(v).unwrap_or_else(|| panic!("no gradient for {}", p.name));
                assert!(g.is_finite());
                assert!(g.data().iter().any(|&x| x != 0.0), "all-zero gradient for {}", p.name);
            }
        }
    }
}
