//! Adversarial and auxiliary training objectives.
//!
//! All losses are built from tape ops, so calling `backward` on their result
//! differentiates through them. Score maps are discriminator outputs shaped
//! `[batch, positions]`; expectations are arithmetic means over both axes.
//!
//! - LSGAN: [`lsgan_adv_loss`], [`lsgan_d_loss`] and their multi-scale sums
//!   [`melgan_adv_loss`], [`melgan_d_loss`].
//! - Spectral auxiliaries: [`spectral_convergence`], [`log_stft_magnitude`],
//!   [`multi_resolution_stft`], and the generator totals built on them.
//! - Pointwise relativistic LSGAN: the per-position margin penalties
//!   [`pointwise_relativistic_d`] / [`pointwise_relativistic_g`], the
//!   worst-K reduction [`topk_mean`], and the combined objectives
//!   [`prls_d_total`] / [`prls_adv_total`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::dsp::{PadMode, StftConfig};
use crate::error::{invalid, shape_err, Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Real;

/// Magnitudes are floored here before the log in [`log_stft_magnitude`].
pub const LOG_MAG_FLOOR: f64 = 1e-7;

/// Per-position discriminator outputs, `[batch, positions]`.
pub type ScoreMap = Var;

/// Weights of the pointwise relativistic objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrlsConfig {
    /// Weight of the mean pointwise relativistic term.
    pub lambda_rls: f64,
    /// Margin by which one side's scores should exceed the other's.
    pub margin: f64,
    /// Weight of the generator's least-squares adversarial term.
    pub lambda_adv: f64,
    /// Weight of the top-K discrepancy term.
    pub lambda_topk: f64,
    /// Fraction of score positions averaged by the top-K term.
    pub k_fraction: f64,
    /// Iteration from which the relativistic terms are active.
    pub enabled_after: usize,
}

impl Default for PrlsConfig {
    fn default() -> Self {
        Self {
            lambda_rls: 0.4,
            margin: 1.0,
            lambda_adv: 4.0,
            lambda_topk: 0.01,
            k_fraction: 0.1,
            enabled_after: 0,
        }
    }
}

impl PrlsConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_rls, self.lambda_adv, self.lambda_topk];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("prls", format!("weights must be finite and >= 0: {self:?}")));
        }
        if !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            return Err(invalid("prls", format!("k_fraction {} must be in (0, 1]", self.k_fraction)));
        }
        if !self.margin.is_finite() {
            return Err(invalid("prls", "margin must be finite".into()));
        }
        Ok(())
    }
}

/// STFT resolutions averaged by [`multi_resolution_stft`].
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStftConfig {
    pub resolutions: Vec<StftConfig>,
}

impl Default for MultiStftConfig {
    /// (512, 240, 50), (1024, 600, 120), (2048, 1200, 240) as
    /// (fft size, window, hop), centered.
    fn default() -> Self {
        let r = |fft, win, hop| StftConfig {
            fft_size: fft,
            win_length: win,
            hop,
            padding: PadMode::Center,
        };
        Self {
            resolutions: vec![r(512, 240, 50), r(1024, 600, 120), r(2048, 1200, 240)],
        }
    }
}

impl MultiStftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(invalid("multi_resolution_stft", "need at least one resolution".into()));
        }
        self.resolutions.iter().try_for_each(|c| c.validate())
    }
}

fn nonempty<T: Real>(tape: &Tape<T>, v: Var, op: &'static str) -> Result<()> {
    if tape.with_value(v, |t| t.is_empty())? {
        return Err(Error::Empty { op });
    }
    Ok(())
}

fn same_shape<T: Real>(tape: &Tape<T>, a: Var, b: Var, op: &'static str) -> Result<()> {
    let (sa, sb) = (tape.shape(a)?, tape.shape(b)?);
    if sa != sb {
        return Err(shape_err(op, format!("real {sa:?} vs fake {sb:?}")));
    }
    Ok(())
}

/// `mean((1 - s)^2)`.
fn mean_sq_from_one<T: Real>(tape: &Tape<T>, s: Var) -> Result<Var> {
    let gap = tape.offset(tape.scale(s, -T::one())?, T::one())?;
    tape.mean(tape.square(gap)?)
}

/// Generator-side LSGAN loss `E[(1 - D(G(z)))^2]`.
pub fn lsgan_adv_loss<T: Real>(tape: &Tape<T>, fake: ScoreMap) -> Result<Var> {
    nonempty(tape, fake, "lsgan_adv_loss")?;
    mean_sq_from_one(tape, fake)
}

/// Discriminator-side LSGAN loss `E[(1 - D(x))^2] + E[D(G(z))^2]`.
pub fn lsgan_d_loss<T: Real>(tape: &Tape<T>, real: ScoreMap, fake: ScoreMap) -> Result<Var> {
    same_shape(tape, real, fake, "lsgan_d_loss")?;
    nonempty(tape, real, "lsgan_d_loss")?;
    let r = mean_sq_from_one(tape, real)?;
    let f = tape.mean(tape.square(fake)?)?;
    tape.add(r, f)
}

fn spectral_convergence_mags<T: Real>(tape: &Tape<T>, mag_x: Var, mag_hat: Var) -> Result<Var> {
    let den = tape.frobenius_norm(mag_x)?;
    if tape.item(den)? == T::zero() {
        return Err(Error::SilentReference);
    }
    let num = tape.frobenius_norm(tape.sub(mag_x, mag_hat)?)?;
    tape.div(num, den)
}

fn log_magnitude_mags<T: Real>(tape: &Tape<T>, mag_x: Var, mag_hat: Var) -> Result<Var> {
    let floor = T::of(LOG_MAG_FLOOR);
    let lx = tape.log(tape.clamp_min(mag_x, floor)?)?;
    let lh = tape.log(tape.clamp_min(mag_hat, floor)?)?;
    let n = tape.with_value(lx, |t| t.len())?;
    let l1 = tape.l1_norm(tape.sub(lx, lh)?)?;
    tape.scale(l1, T::one() / T::of(n as f64))
}

fn paired_mags<T: Real>(tape: &Tape<T>, x: Var, x_hat: Var, cfg: &StftConfig) -> Result<(Var, Var)> {
    let (sx, sh) = (tape.shape(x)?, tape.shape(x_hat)?);
    if sx != sh {
        return Err(shape_err("stft loss", format!("x {sx:?} vs x_hat {sh:?}")));
    }
    Ok((tape.stft_magnitude(x, cfg)?, tape.stft_magnitude(x_hat, cfg)?))
}

/// `‖ |S(x)| - |S(x̂)| ‖_F / ‖ |S(x)| ‖_F`. Errors on a silent reference.
pub fn spectral_convergence<T: Real>(tape: &Tape<T>, x: Var, x_hat: Var, cfg: &StftConfig) -> Result<Var> {
    let (mx, mh) = paired_mags(tape, x, x_hat, cfg)?;
    spectral_convergence_mags(tape, mx, mh)
}

/// `(1/N) ‖ log|S(x)| - log|S(x̂)| ‖_1` with magnitudes floored at [`LOG_MAG_FLOOR`].
pub fn log_stft_magnitude<T: Real>(tape: &Tape<T>, x: Var, x_hat: Var, cfg: &StftConfig) -> Result<Var> {
    let (mx, mh) = paired_mags(tape, x, x_hat, cfg)?;
    log_magnitude_mags(tape, mx, mh)
}

/// `(1/M) Σ_m (L_sc^m + L_mag^m)` over the configured resolutions.
pub fn multi_resolution_stft<T: Real>(tape: &Tape<T>, x: Var, x_hat: Var, cfg: &MultiStftConfig) -> Result<Var> {
    cfg.validate()?;
    let mut total: Option<Var> = None;
    for res in &cfg.resolutions {
        let (mx, mh) = paired_mags(tape, x, x_hat, res)?;
        let sc = spectral_convergence_mags(tape, mx, mh)?;
        let mag = log_magnitude_mags(tape, mx, mh)?;
        let term = tape.add(sc, mag)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    let m = cfg.resolutions.len() as f64;
    tape.scale(total.expect("validated non-empty"), T::one() / T::of(m))
}

/// `L_stft(x, x̂) + λ_adv · lsgan_adv_loss(fake)`.
pub fn pwgan_generator_total<T: Real>(
    tape: &Tape<T>,
    x: Var,
    x_hat: Var,
    fake: ScoreMap,
    lambda_adv: f64,
    stft: &MultiStftConfig,
) -> Result<Var> {
    let spec = multi_resolution_stft(tape, x, x_hat, stft)?;
    let adv = tape.scale(lsgan_adv_loss(tape, fake)?, T::of(lambda_adv))?;
    tape.add(spec, adv)
}

fn sum_vars<T: Real>(tape: &Tape<T>, terms: Vec<Var>, op: &'static str) -> Result<Var> {
    let mut it = terms.into_iter();
    let first = it.next().ok_or(Error::Empty { op })?;
    it.try_fold(first, |acc, t| tape.add(acc, t))
}

fn paired_scales(reals: &[ScoreMap], fakes: &[ScoreMap], op: &'static str) -> Result<()> {
    if reals.len() != fakes.len() {
        return Err(shape_err(op, format!("{} real scales vs {} fake scales", reals.len(), fakes.len())));
    }
    Ok(())
}

/// `Σ_k ( E[(1 - D_k(x))^2] + E[D_k(G(z))^2] )`.
pub fn melgan_d_loss<T: Real>(tape: &Tape<T>, reals: &[ScoreMap], fakes: &[ScoreMap]) -> Result<Var> {
    paired_scales(reals, fakes, "melgan_d_loss")?;
    let terms = reals
        .iter()
        .zip(fakes)
        .map(|(&r, &f)| lsgan_d_loss(tape, r, f))
        .collect::<Result<Vec<_>>>()?;
    sum_vars(tape, terms, "melgan_d_loss")
}

/// `Σ_k E[(1 - D_k(G(z)))^2]`.
pub fn melgan_adv_loss<T: Real>(tape: &Tape<T>, fakes: &[ScoreMap]) -> Result<Var> {
    let terms = fakes
        .iter()
        .map(|&f| lsgan_adv_loss(tape, f))
        .collect::<Result<Vec<_>>>()?;
    sum_vars(tape, terms, "melgan_adv_loss")
}

/// `L_stft(x, x̂) + λ_adv · melgan_adv_loss(fakes)`.
pub fn melgan_generator_total<T: Real>(
    tape: &Tape<T>,
    x: Var,
    x_hat: Var,
    fakes: &[ScoreMap],
    lambda_adv: f64,
    stft: &MultiStftConfig,
) -> Result<Var> {
    let spec = multi_resolution_stft(tape, x, x_hat, stft)?;
    let adv = tape.scale(melgan_adv_loss(tape, fakes)?, T::of(lambda_adv))?;
    tape.add(spec, adv)
}

/// Elementwise `(D(x)_t - D(G(z))_t - m)^2`, unreduced.
pub fn pointwise_relativistic_d<T: Real>(tape: &Tape<T>, real: ScoreMap, fake: ScoreMap, margin: f64) -> Result<Var> {
    same_shape(tape, real, fake, "pointwise_relativistic_d")?;
    let gap = tape.offset(tape.sub(real, fake)?, T::of(-margin))?;
    tape.square(gap)
}

/// Elementwise `(D(G(z))_t - D(x)_t - m)^2`, unreduced.
pub fn pointwise_relativistic_g<T: Real>(tape: &Tape<T>, fake: ScoreMap, real: ScoreMap, margin: f64) -> Result<Var> {
    same_shape(tape, real, fake, "pointwise_relativistic_g")?;
    let gap = tape.offset(tape.sub(fake, real)?, T::of(-margin))?;
    tape.square(gap)
}

/// `ceil(k_fraction * positions)`, at least 1.
///
/// A relative slack of 1e-9 keeps products such as `0.1 * 30` (which is
/// `3.0000000000000004` in binary) from rounding up to an extra element.
pub fn topk_count(k_fraction: f64, positions: usize) -> usize {
    let raw = k_fraction * positions as f64;
    let k = Float::ceil(raw - raw.abs() * 1e-9);
    (k.max(1.0) as usize).min(positions.max(1))
}

/// Mean of the `ceil(k_fraction · T)` largest values of each row of
/// `per_position` (`[T]` or `[batch, T]`), averaged over the batch.
pub fn topk_mean<T: Real>(tape: &Tape<T>, per_position: Var, k_fraction: f64) -> Result<Var> {
    if !(k_fraction > 0.0 && k_fraction <= 1.0) {
        return Err(invalid("topk_mean", format!("k_fraction {k_fraction} must be in (0, 1]")));
    }
    let shape = tape.shape(per_position)?;
    let positions = match shape.last() {
        Some(&n) if n > 0 && !shape.contains(&0) => n,
        _ => return Err(Error::Empty { op: "topk_mean" }),
    };
    let k = topk_count(k_fraction, positions);
    tape.mean(tape.topk_values(per_position, k)?)
}

/// Discriminator objective: LSGAN terms plus the weighted mean and top-K
/// pointwise relativistic penalties.
pub fn prls_d_total<T: Real>(tape: &Tape<T>, real: ScoreMap, fake: ScoreMap, cfg: &PrlsConfig) -> Result<Var> {
    cfg.validate()?;
    let base = lsgan_d_loss(tape, real, fake)?;
    let pw = pointwise_relativistic_d(tape, real, fake, cfg.margin)?;
    let rls = tape.scale(tape.mean(pw)?, T::of(cfg.lambda_rls))?;
    let topk = tape.scale(topk_mean(tape, pw, cfg.k_fraction)?, T::of(cfg.lambda_topk))?;
    tape.add(tape.add(base, rls)?, topk)
}

/// Generator adversarial objective: weighted LSGAN term plus the weighted
/// mean and top-K pointwise relativistic penalties.
pub fn prls_adv_total<T: Real>(tape: &Tape<T>, fake: ScoreMap, real: ScoreMap, cfg: &PrlsConfig) -> Result<Var> {
    cfg.validate()?;
    let base = tape.scale(lsgan_adv_loss(tape, fake)?, T::of(cfg.lambda_adv))?;
    let pw = pointwise_relativistic_g(tape, fake, real, cfg.margin)?;
    let rls = tape.scale(tape.mean(pw)?, T::of(cfg.lambda_rls))?;
    let topk = tape.scale(topk_mean(tape, pw, cfg.k_fraction)?, T::of(cfg.lambda_topk))?;
    tape.add(tape.add(base, rls)?, topk)
}

/// [`prls_d_total`] per scale, summed across scales.
pub fn prls_d_total_scales<T: Real>(
    tape: &Tape<T>,
    reals: &[ScoreMap],
    fakes: &[ScoreMap],
    cfg: &PrlsConfig,
) -> Result<Var> {
    paired_scales(reals, fakes, "prls_d_total")?;
    let terms = reals
        .iter()
        .zip(fakes)
        .map(|(&r, &f)| prls_d_total(tape, r, f, cfg))
        .collect::<Result<Vec<_>>>()?;
    sum_vars(tape, terms, "prls_d_total")
}

/// [`prls_adv_total`] per scale, summed across scales.
pub fn prls_adv_total_scales<T: Real>(
    tape: &Tape<T>,
    fakes: &[ScoreMap],
    reals: &[ScoreMap],
    cfg: &PrlsConfig,
) -> Result<Var> {
    paired_scales(reals, fakes, "prls_adv_total")?;
    let terms = fakes
        .iter()
        .zip(reals)
        .map(|(&f, &r)| prls_adv_total(tape, f, r, cfg))
        .collect::<Result<Vec<_>>>()?;
    sum_vars(tape, terms, "prls_adv_total")
}
