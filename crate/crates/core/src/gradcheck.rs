//! Central finite-difference verification of tape gradients.
//!
//! [`grad_check`] checks one scalar function at one point. The registry in
//! [`cases`] covers every loss and model forward pass, each at many seeded
//! random points. Points where a perturbation changes a branch decision
//! (a leaky-ReLU sign, an `abs` sign, a clamp, a top-k selection) are
//! redrawn, since a difference quotient across a kink measures nothing.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::{PadMode, StftConfig};
use crate::error::{invalid, Result};
use crate::losses::{self, MultiStftConfig, PrlsConfig};
use crate::models::{discriminate, DiscriminatorSpec, GeneratorSpec, MelGanSpec, ParameterSet, PwGanSpec};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative errors are measured against `max(|analytic|, |numeric|)`, floored
/// at this fraction of the largest numeric gradient component so that
/// near-zero components do not turn rounding noise into huge ratios.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Random points per case.
    pub points: usize,
    /// Upper bound on coordinates compared per point; `None` compares all.
    pub max_coords: Option<usize>,
    /// Redraws allowed when a perturbation crosses a kink.
    pub retries: usize,
    /// Negates the analytic gradient. A correct checker must then fail.
    pub flip_sign: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            tol: 1e-4,
            points: 100,
            max_coords: None,
            retries: 20,
            flip_sign: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub points: usize,
    pub coords_checked: usize,
    /// Coordinates excluded because every redraw still crossed a kink.
    pub coords_skipped: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

struct PointResult {
    max_rel: f64,
    checked: usize,
    crossings: Vec<usize>,
}

fn eval<F>(f: &F, x: &Tensor<f64>) -> Result<(f64, u64)>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var> + ?Sized,
{
    let tape = Tape::new();
    let v = tape.leaf(x.clone(), false);
    let out = f(&tape, v)?;
    Ok((tape.item(out)?, tape.branch_signature()))
}

fn check_point<F>(f: &F, x: &Tensor<f64>, coords: &[usize], eps: f64, tol: f64, flip: bool) -> Result<PointResult>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var> + ?Sized,
{
    let tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let out = f(&tape, v)?;
    let sig = tape.branch_signature();
    let grads = tape.backward(out)?;
    let analytic = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut numeric = Vec::with_capacity(coords.len());
    let mut halved = Vec::with_capacity(coords.len());
    let mut crossings = Vec::new();
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        let mut quotient = |h: f64| -> Result<(f64, bool)> {
            probe.data_mut()[i] = orig + h;
            let (fp, sp) = eval(f, &probe)?;
            probe.data_mut()[i] = orig - h;
            let (fm, sm) = eval(f, &probe)?;
            probe.data_mut()[i] = orig;
            Ok(((fp - fm) / (2.0 * h), sp != sig || sm != sig))
        };
        let (n, crossed) = quotient(eps)?;
        let (n2, crossed2) = quotient(eps / 2.0)?;
        if crossed || crossed2 {
            crossings.push(i);
        }
        numeric.push(n);
        halved.push(n2);
    }
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (RELATIVE_FLOOR * scale).max(1e-12);
    // Halving the step of a smooth function changes the quotient by about a
    // quarter of its truncation error. A larger change means the step spans
    // a non-smooth locus that the branch signature cannot see, such as
    // `|z|` of a spectral bin passing near zero.
    for (k, &i) in coords.iter().enumerate() {
        let drift = (numeric[k] - halved[k]).abs() / numeric[k].abs().max(floor);
        if drift > 0.5 * tol && !crossings.contains(&i) {
            crossings.push(i);
        }
    }
    let sign = if flip { -1.0 } else { 1.0 };
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    for (&i, &n) in coords.iter().zip(&numeric) {
        if crossings.contains(&i) {
            continue;
        }
        let a = sign * analytic.data()[i];
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        max_rel = max_rel.max(rel);
        checked += 1;
    }
    Ok(PointResult {
        max_rel,
        checked,
        crossings,
    })
}

/// Compares `backward` against central differences at every coordinate of
/// `x`. Kink crossings are not redrawn here; they are excluded and counted.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    let r = check_point(&f, x, &coords, eps, tol, false)?;
    Ok(GradCheckReport {
        name: String::from("grad_check"),
        points: 1,
        coords_checked: r.checked,
        coords_skipped: r.crossings.len(),
        max_rel_err: r.max_rel,
        tol,
        passed: r.max_rel < tol,
    })
}

type Sampler = Box<dyn Fn(&mut ChaCha8Rng) -> Tensor<f64>>;
type Objective = Box<dyn Fn(&Tape<f64>, Var) -> Result<Var>>;

/// A named scalar function with a random-point generator.
pub struct CheckCase {
    pub name: &'static str,
    /// Coordinates compared per point when the input is large.
    pub max_coords: Option<usize>,
    sample: Sampler,
    objective: Objective,
}

impl CheckCase {
    pub fn new(
        name: &'static str,
        max_coords: Option<usize>,
        sample: impl Fn(&mut ChaCha8Rng) -> Tensor<f64> + 'static,
        objective: impl Fn(&Tape<f64>, Var) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            name,
            max_coords,
            sample: Box::new(sample),
            objective: Box::new(objective),
        }
    }

    /// Checks `opts.points` random points, redrawing any point whose
    /// perturbations cross a kink.
    pub fn run(&self, seed: u64, opts: &CheckOptions) -> Result<GradCheckReport> {
        if opts.eps <= 0.0 || opts.tol <= 0.0 {
            return Err(invalid("grad_check", "eps and tol must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = match (opts.max_coords, self.max_coords) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        let mut report = GradCheckReport {
            name: String::from(self.name),
            points: 0,
            coords_checked: 0,
            coords_skipped: 0,
            max_rel_err: 0.0,
            tol: opts.tol,
            passed: false,
        };
        for _ in 0..opts.points {
            let mut attempt = 0;
            let result = loop {
                let x = (self.sample)(&mut rng);
                let coords: Vec<usize> = match limit {
                    Some(m) if m < x.len() => {
                        let mut c = sample(&mut rng, x.len(), m).into_vec();
                        c.sort_unstable();
                        c
                    }
                    _ => (0..x.len()).collect(),
                };
                let r = check_point(&*self.objective, &x, &coords, opts.eps, opts.tol, opts.flip_sign)?;
                if r.crossings.is_empty() || attempt >= opts.retries {
                    break r;
                }
                attempt += 1;
            };
            report.points += 1;
            report.coords_checked += result.checked;
            report.coords_skipped += result.crossings.len();
            report.max_rel_err = report.max_rel_err.max(result.max_rel);
        }
        report.passed = report.max_rel_err < opts.tol && report.coords_checked > 0;
        Ok(report)
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).expect("sampler shapes are consistent")
}

/// Splits a flat variable into consecutive reshaped pieces.
fn split(tape: &Tape<f64>, x: Var, shapes: &[&[usize]]) -> Result<Vec<Var>> {
    let mut off = 0;
    let mut out = Vec::with_capacity(shapes.len());
    for s in shapes {
        let n: usize = s.iter().product();
        out.push(tape.reshape(tape.slice(x, 0, off, n)?, s)?);
        off += n;
    }
    Ok(out)
}

const MAP: [usize; 2] = [2, 8];
const SCALES: [[usize; 2]; 3] = [[2, 8], [2, 4], [2, 2]];

fn scores(n_maps: usize) -> impl Fn(&mut ChaCha8Rng) -> Tensor<f64> {
    move |rng| tensor(&[n_maps * 16], normal(rng, n_maps * 16, 1.0))
}

fn multiscale(rng: &mut ChaCha8Rng, sides: usize) -> Tensor<f64> {
    let n = sides * SCALES.iter().map(|s| s[0] * s[1]).sum::<usize>();
    tensor(&[n], normal(rng, n, 1.0))
}

fn scale_shapes(sides: usize) -> Vec<&'static [usize]> {
    let mut v: Vec<&'static [usize]> = Vec::new();
    for _ in 0..sides {
        for s in &SCALES {
            v.push(s);
        }
    }
    v
}

/// A deterministic band-limited reference signal for the spectral losses.
fn reference_signal(n: usize) -> Tensor<f64> {
    let data = (0..n)
        .map(|i| {
            let t = i as f64 / 22050.0;
            let w = 2.0 * core::f64::consts::PI;
            0.5 * Float::sin(w * 220.0 * t) + 0.25 * Float::sin(w * 660.0 * t + 0.3) + 0.1 * Float::sin(w * 1500.0 * t)
        })
        .collect();
    tensor(&[1, n], data)
}

fn single_res() -> StftConfig {
    StftConfig {
        fft_size: 512,
        win_length: 240,
        hop: 50,
        padding: PadMode::Center,
    }
}

/// Tiny MelGAN generator used by the gradient suite.
pub fn tiny_melgan() -> MelGanSpec {
    MelGanSpec {
        n_mels: 4,
        base_channels: 8,
        strides: vec![2, 2],
        dilations: vec![1, 3],
        hop: 4,
        pre_kernel: 7,
        post_kernel: 7,
        slope: 0.2,
    }
}

/// Tiny PWGAN generator used by the gradient suite.
pub fn tiny_pwgan() -> PwGanSpec {
    PwGanSpec {
        n_mels: 4,
        layers: 3,
        dilation_cycle: 3,
        residual_channels: 4,
        gate_channels: 8,
        skip_channels: 4,
        kernel: 3,
        hop: 4,
    }
}

/// Narrow discriminator used by the gradient suite.
pub fn tiny_discriminator(scales: usize) -> DiscriminatorSpec {
    DiscriminatorSpec {
        scales,
        channels: 8,
        groups: 2,
        ..DiscriminatorSpec::single()
    }
}

/// Checks `mean(out ⊙ r)` with respect to every parameter of a model.
fn model_case(
    name: &'static str,
    params: ParameterSet<f64>,
    forward: impl Fn(&Tape<f64>, &crate::models::BoundParams) -> Result<Var> + 'static,
    out_len: usize,
    seed: u64,
) -> CheckCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = normal(&mut rng, out_len, 1.0);
    let flat_len = params.num_scalars();
    let base = params.flatten();
    let template = params.clone();
    CheckCase::new(
        name,
        Some(24),
        move |rng| {
            // Perturb around the initialization so activations stay in range.
            let noise = normal(rng, flat_len, 1.0);
            let data = base.iter().zip(noise).map(|(b, n)| b + 0.3 * n).collect();
            tensor(&[flat_len], data)
        },
        move |tape, x| {
            let bound = template.bind_flat(tape, x)?;
            let out = forward(tape, &bound)?;
            let n = tape.with_value(out, |t| t.len())?;
            let w = tape.constant(tensor(&[n], r[..n].to_vec()));
            let flat = tape.reshape(out, &[n])?;
            tape.mean(tape.mul(flat, w)?)
        },
    )
}

/// Every registered check. Model inputs are drawn from `seed`.
pub fn cases(seed: u64) -> Result<Vec<CheckCase>> {
    let prls = PrlsConfig {
        k_fraction: 0.25,
        ..PrlsConfig::default()
    };
    let mut out = vec![
        CheckCase::new("lsgan_d_loss", None, scores(2), |t, x| {
            let v = split(t, x, &[&MAP, &MAP])?;
            losses::lsgan_d_loss(t, v[0], v[1])
        }),
        CheckCase::new("lsgan_adv_loss", None, scores(1), |t, x| {
            losses::lsgan_adv_loss(t, t.reshape(x, &MAP)?)
        }),
        CheckCase::new("melgan_d_loss", None, |r| multiscale(r, 2), |t, x| {
            let v = split(t, x, &scale_shapes(2))?;
            losses::melgan_d_loss(t, &v[..3], &v[3..])
        }),
        CheckCase::new("melgan_adv_loss", None, |r| multiscale(r, 1), |t, x| {
            let v = split(t, x, &scale_shapes(1))?;
            losses::melgan_adv_loss(t, &v)
        }),
        CheckCase::new("pointwise_relativistic_d", None, scores(2), |t, x| {
            let v = split(t, x, &[&MAP, &MAP])?;
            t.mean(losses::pointwise_relativistic_d(t, v[0], v[1], 1.0)?)
        }),
        CheckCase::new("pointwise_relativistic_g", None, scores(2), |t, x| {
            let v = split(t, x, &[&MAP, &MAP])?;
            t.mean(losses::pointwise_relativistic_g(t, v[0], v[1], 1.0)?)
        }),
        CheckCase::new("topk_mean", None, scores(1), |t, x| {
            losses::topk_mean(t, t.reshape(x, &MAP)?, 0.25)
        }),
        CheckCase::new("prls_d_total", None, scores(2), move |t, x| {
            let v = split(t, x, &[&MAP, &MAP])?;
            losses::prls_d_total(t, v[0], v[1], &prls)
        }),
        CheckCase::new("prls_adv_total", None, scores(2), move |t, x| {
            let v = split(t, x, &[&MAP, &MAP])?;
            losses::prls_adv_total(t, v[0], v[1], &prls)
        }),
        CheckCase::new("prls_d_total_scales", None, |r| multiscale(r, 2), move |t, x| {
            let v = split(t, x, &scale_shapes(2))?;
            losses::prls_d_total_scales(t, &v[..3], &v[3..], &prls)
        }),
        CheckCase::new("prls_adv_total_scales", None, |r| multiscale(r, 2), move |t, x| {
            let v = split(t, x, &scale_shapes(2))?;
            losses::prls_adv_total_scales(t, &v[..3], &v[3..], &prls)
        }),
    ];

    let short = reference_signal(512);
    let long = reference_signal(1280);
    let audio = |n: usize| move |r: &mut ChaCha8Rng| tensor(&[1, n], normal(r, n, 2.0));
    {
        let x = short.clone();
        out.push(CheckCase::new("spectral_convergence", Some(64), audio(512), move |t, v| {
            let x = t.constant(x.clone());
            losses::spectral_convergence(t, x, v, &single_res())
        }));
    }
    {
        let x = short.clone();
        out.push(CheckCase::new("log_stft_magnitude", Some(32), audio(512), move |t, v| {
            let x = t.constant(x.clone());
            losses::log_stft_magnitude(t, x, v, &single_res())
        }));
    }
    {
        let x = long.clone();
        out.push(CheckCase::new("multi_resolution_stft", Some(24), audio(1280), move |t, v| {
            let x = t.constant(x.clone());
            losses::multi_resolution_stft(t, x, v, &MultiStftConfig::default())
        }));
    }
    {
        let x = long.clone();
        let sample = |r: &mut ChaCha8Rng| {
            let mut d = normal(r, 1280, 2.0);
            d.extend(normal(r, 16, 1.0));
            tensor(&[1296], d)
        };
        out.push(CheckCase::new("pwgan_generator_total", Some(24), sample, move |t, v| {
            let x = t.constant(x.clone());
            let p = split(t, v, &[&[1, 1280], &MAP])?;
            losses::pwgan_generator_total(t, x, p[0], p[1], 4.0, &MultiStftConfig::default())
        }));
    }
    {
        let x = long;
        let n_scores: usize = SCALES.iter().map(|s| s[0] * s[1]).sum();
        let sample = move |r: &mut ChaCha8Rng| {
            let mut d = normal(r, 1280, 2.0);
            d.extend(normal(r, n_scores, 1.0));
            tensor(&[1280 + n_scores], d)
        };
        out.push(CheckCase::new("melgan_generator_total", Some(24), sample, move |t, v| {
            let x = t.constant(x.clone());
            let mut shapes: Vec<&[usize]> = vec![&[1, 1280]];
            shapes.extend(scale_shapes(1));
            let p = split(t, v, &shapes)?;
            losses::melgan_generator_total(t, x, p[0], &p[1..], 4.0, &MultiStftConfig::default())
        }));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    {
        let spec = GeneratorSpec::MelGan(tiny_melgan());
        let params = spec.init_params::<f64>(seed)?;
        let mel = tensor(&[1, 4, 6], normal(&mut rng, 24, 1.0));
        out.push(model_case(
            "melgan_generator",
            params,
            move |t, p| spec.generate(t, t.constant(mel.clone()), None, p),
            24,
            seed,
        ));
    }
    {
        let spec = GeneratorSpec::PwGan(tiny_pwgan());
        let params = spec.init_params::<f64>(seed.wrapping_add(1))?;
        let mel = tensor(&[1, 4, 5], normal(&mut rng, 20, 1.0));
        let noise = tensor(&[1, 1, 20], normal(&mut rng, 20, 1.0));
        out.push(model_case(
            "pwgan_generator",
            params,
            move |t, p| spec.generate(t, t.constant(mel.clone()), Some(t.constant(noise.clone())), p),
            20,
            seed,
        ));
    }
    for (name, scales, len) in [("discriminator", 1usize, 128usize), ("multiscale_discriminator", 3, 1792)] {
        let spec = tiny_discriminator(scales);
        let params = spec.init_params::<f64>(seed.wrapping_add(2))?;
        let wav = tensor(&[1, 1, len], normal(&mut rng, len, 0.5));
        let total: usize = {
            // Score positions across all scales for this input length.
            let mut n = 0;
            let mut l = len;
            for s in 0..scales {
                if s > 0 {
                    l = (l - spec.pool) / spec.pool + 1;
                }
                let mut m = l;
                for &st in &spec.strides {
                    m = (m - 1) / st + 1;
                }
                n += m;
            }
            n
        };
        out.push(model_case(
            name,
            params,
            move |t, p| {
                let maps = discriminate(t, t.constant(wav.clone()), &spec, p)?;
                let flat = maps
                    .iter()
                    .map(|&m| {
                        let n = t.with_value(m, |v| v.len())?;
                        t.reshape(m, &[n])
                    })
                    .collect::<Result<Vec<_>>>()?;
                t.concat(&flat, 0)
            },
            total,
            seed,
        ));
    }
    Ok(out)
}

/// Runs the named check, or all of them for `"all"`.
pub fn run(which: &str, seed: u64, opts: &CheckOptions) -> Result<Vec<GradCheckReport>> {
    let all = cases(seed)?;
    let selected: Vec<&CheckCase> = all.iter().filter(|c| which == "all" || c.name == which).collect();
    if selected.is_empty() {
        let names: Vec<&str> = all.iter().map(|c| c.name).collect();
        return Err(invalid("grad_check", format!("unknown check {which:?}; known: {names:?}")));
    }
    selected.iter().map(|c| c.run(seed, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_function_passes_and_flipped_sign_fails() {
        let f = |t: &Tape<f64>, x: Var| t.sum(t.mul(t.tanh(x)?, x)?);
        let x = Tensor::from_slice(&[0.3, -1.2, 0.8]);
        let r = grad_check(f, &x, 1e-3, 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
        let case = CheckCase::new("f", None, |r| tensor(&[3], normal(r, 3, 1.0)), f);
        let opts = CheckOptions {
            points: 3,
            flip_sign: true,
            ..CheckOptions::default()
        };
        let r = case.run(1, &opts).unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_err > 1.0);
    }

    #[test]
    fn registry_has_unique_names_and_covers_losses_and_models() {
        let all = cases(0).unwrap();
        let mut names: Vec<&str> = all.iter().map(|c| c.name).collect();
        names.sort_unstable();
        let before = names.len();
        names.dedup();
        assert_eq!(names.len(), before);
        for n in ["prls_d_total", "spectral_convergence", "melgan_generator", "pwgan_generator", "discriminator"] {
            assert!(names.contains(&n), "{n}");
        }
    }

    #[test]
    fn unknown_name_is_an_error() {
        assert!(run("nope", 0, &CheckOptions::default()).is_err());
    }

    #[test]
    fn every_case_passes_at_a_few_points() {
        let opts = CheckOptions {
            points: 3,
            ..CheckOptions::default()
        };
        for r in run("all", 7, &opts).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }
}
