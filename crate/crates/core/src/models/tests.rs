use super::*;
use crate::gradcheck::{tiny_discriminator, tiny_melgan, tiny_pwgan};
use rand::Rng;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

fn run_g(spec: &GeneratorSpec, params: &ParameterSet<f64>, mel: &Tensor<f64>, noise: Option<&Tensor<f64>>) -> Result<Tensor<f64>> {
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let m = tape.constant(mel.clone());
    let z = noise.map(|n| tape.constant(n.clone()));
    let y = spec.generate(&tape, m, z, &p)?;
    tape.value(y)
}

fn run_d(spec: &DiscriminatorSpec, params: &ParameterSet<f64>, wav: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let maps = discriminate(&tape, tape.constant(wav.clone()), spec, &p)?;
    maps.into_iter().map(|m| tape.value(m)).collect()
}

#[test]
fn default_melgan_upsamples_by_hop_with_bounded_output() {
    let spec = GeneratorSpec::MelGan(MelGanSpec::default());
    let params = spec.init_params::<f64>(0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mel = randn(&mut rng, &[2, 80, 3]);
    let y = run_g(&spec, &params, &mel, None).unwrap();
    assert_eq!(y.shape(), &[2, 1, 768]);
    assert!(y.is_finite());
    assert!(y.data().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn pwgan_output_length_over_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let spec = PwGanSpec {
            n_mels: rng.random_range(1..6),
            layers: rng.random_range(1..5),
            dilation_cycle: rng.random_range(1..4),
            residual_channels: rng.random_range(1..5),
            gate_channels: 2 * rng.random_range(1..4),
            skip_channels: rng.random_range(1..5),
            kernel: 3,
            hop: rng.random_range(1..9),
        };
        let (b, f) = (rng.random_range(1..3), rng.random_range(1..6));
        let g = GeneratorSpec::PwGan(spec.clone());
        let params = g.init_params::<f64>(rng.random()).unwrap();
        let mel = randn(&mut rng, &[b, spec.n_mels, f]);
        let noise = randn(&mut rng, &[b, 1, f * spec.hop]);
        let y = run_g(&g, &params, &mel, Some(&noise)).unwrap();
        assert_eq!(y.shape(), &[b, 1, f * spec.hop], "{spec:?}");
        assert!(y.is_finite() && y.data().iter().all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn zero_weights_give_constant_tanh_of_output_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bias = 0.37;
    for (spec, last) in [
        (GeneratorSpec::MelGan(tiny_melgan()), "post.b"),
        (GeneratorSpec::PwGan(tiny_pwgan()), "post2.b"),
    ] {
        let mut params = spec.init_params::<f64>(9).unwrap();
        params.set_all_zero();
        params.get_mut(last).unwrap().data_mut()[0] = bias;
        let mel = randn(&mut rng, &[1, 4, 5]);
        let noise = Tensor::zeros(&[1, 1, 20]);
        let y = run_g(&spec, &params, &mel, spec.needs_noise().then_some(&noise)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 20]);
        assert!(y.data().iter().all(|&v| v == bias.tanh()), "{spec:?}");
    }
}

#[test]
fn initialization_is_seeded() {
    let spec = GeneratorSpec::MelGan(tiny_melgan());
    let a = spec.init_params::<f64>(5).unwrap();
    let b = spec.init_params::<f64>(5).unwrap();
    let c = spec.init_params::<f64>(6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.get("post.b").unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn init_std_follows_gain_over_root_fan_in() {
    let spec = DiscriminatorSpec::single();
    let params = spec.init_params::<f64>(1).unwrap();
    // Middle layer: 32 channels, groups 4, kernel 5 -> fan_in 40.
    let w = params.get("d0.l2.w").unwrap();
    let n = w.len() as f64;
    let var = w.data().iter().map(|v| v * v).sum::<f64>() / n;
    let expect = leaky_relu_gain(0.2).powi(2) / 40.0;
    assert!((var / expect - 1.0).abs() < 0.1, "{var} vs {expect}");
}

#[test]
fn mismatched_parameters_are_rejected() {
    let spec = GeneratorSpec::MelGan(tiny_melgan());
    let other = GeneratorSpec::MelGan(MelGanSpec {
        base_channels: 16,
        ..tiny_melgan()
    });
    let params = other.init_params::<f64>(0).unwrap();
    assert!(check_generator_params(&spec, &params).is_err());
    let mel = Tensor::zeros(&[1, 4, 3]);
    assert!(run_g(&spec, &params, &mel, None).is_err());

    let pw = GeneratorSpec::PwGan(tiny_pwgan());
    let pp = pw.init_params::<f64>(0).unwrap();
    assert!(run_g(&pw, &pp, &mel, None).is_err(), "noise is required");
    let short = Tensor::zeros(&[1, 1, 11]);
    assert!(run_g(&pw, &pp, &mel, Some(&short)).is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = MelGanSpec {
        hop: 100,
        ..MelGanSpec::default()
    };
    assert!(bad.validate().is_err());
    let bad = MelGanSpec {
        base_channels: 12,
        strides: vec![2, 2, 2],
        hop: 8,
        ..MelGanSpec::default()
    };
    assert!(bad.validate().is_err());
    let bad = DiscriminatorSpec {
        kernel: 4,
        ..DiscriminatorSpec::single()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn discriminator_score_lengths_and_short_input_error() {
    let spec = DiscriminatorSpec::multiscale();
    let params = spec.init_params::<f64>(0).unwrap();
    let wav = Tensor::zeros(&[2, 1, 4096]);
    let maps = run_d(&spec, &params, &wav).unwrap();
    let lens: Vec<Vec<usize>> = maps.iter().map(|m| m.shape().to_vec()).collect();
    assert_eq!(lens, vec![vec![2, 512], vec![2, 128], vec![2, 32]]);
    assert_eq!(spec.receptive_field(), 1 + 14 + 4 + 8 + 16 + 32 + 32);

    let tiny = Tensor::zeros(&[1, 1, 50]);
    assert!(matches!(run_d(&spec, &params, &tiny), Err(Error::TooShort { .. })));
}

/// Perturbing one input sample at a time and recording which inputs change
/// a given interior score recovers the receptive field.
#[test]
fn receptive_field_matches_perturbation_oracle() {
    let spec = tiny_discriminator(1);
    let params = spec.init_params::<f64>(4).unwrap();
    let len = 320;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = randn(&mut rng, &[1, 1, len]);
    let y0 = run_d(&spec, &params, &base).unwrap().remove(0);
    let target = y0.len() / 2;
    let mut touching = Vec::new();
    for i in 0..len {
        let mut x = base.clone();
        x.data_mut()[i] += 1.0;
        let y = run_d(&spec, &params, &x).unwrap().remove(0);
        if y.data()[target] != y0.data()[target] {
            touching.push(i);
        }
    }
    let span = touching.last().unwrap() - touching.first().unwrap() + 1;
    assert_eq!(span, spec.receptive_field());
}

#[test]
fn scores_shift_with_input_by_total_stride() {
    let spec = tiny_discriminator(1);
    let params = spec.init_params::<f64>(6).unwrap();
    let stride = spec.total_stride();
    let len = 512;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let long = randn(&mut rng, &[1, 1, len + stride]);
    let a = Tensor::new(&[1, 1, len], long.data()[..len].to_vec()).unwrap();
    let b = Tensor::new(&[1, 1, len], long.data()[stride..].to_vec()).unwrap();
    let ya = run_d(&spec, &params, &a).unwrap().remove(0);
    let yb = run_d(&spec, &params, &b).unwrap().remove(0);
    let margin = spec.receptive_field() / stride + 1;
    let n = ya.len();
    for t in margin..n - margin {
        assert!((ya.data()[t + 1] - yb.data()[t]).abs() < 1e-12, "position {t}");
    }
}

#[test]
fn bound_flat_views_match_named_parameters() {
    let spec = GeneratorSpec::PwGan(tiny_pwgan());
    let params = spec.init_params::<f64>(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mel = randn(&mut rng, &[1, 4, 5]);
    let noise = randn(&mut rng, &[1, 1, 20]);
    let direct = run_g(&spec, &params, &mel, Some(&noise)).unwrap();
    let tape = Tape::new();
    let flat = tape.leaf(Tensor::from_slice(&params.flatten()), true);
    let p = params.bind_flat(&tape, flat).unwrap();
    let y = spec
        .generate(&tape, tape.constant(mel), Some(tape.constant(noise)), &p)
        .unwrap();
    assert_eq!(tape.value(y).unwrap(), direct);
}
