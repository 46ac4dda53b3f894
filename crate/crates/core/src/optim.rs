//! First-order optimizers, global-norm clipping, and step-halving schedules.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{invalid, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimKind {
    Adam,
    RAdam,
}

impl OptimKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimKind::Adam => "adam",
            OptimKind::RAdam => "radam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.eps > 0.0) {
            return Err(invalid("optimizer", format!("invalid settings {self:?}")));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(invalid("optimizer", format!("grad clip {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Moment buffers mirroring the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub kind: OptimKind,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> OptimState<T> {
    pub fn new(kind: OptimKind, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| alloc::vec![T::zero(); p.len()]).collect();
        Self {
            kind,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    fn check(&self, params: &[Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        let ok = params.len() == grads.len()
            && params.len() == self.m.len()
            && params
                .iter()
                .zip(grads)
                .zip(&self.m)
                .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
        if !ok {
            return Err(invalid("optimizer", "parameter, gradient, and state shapes differ".into()));
        }
        Ok(())
    }

    /// Dispatches on `self.kind`.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64, betas: (f64, f64), eps: f64) -> Result<()> {
        match self.kind {
            OptimKind::Adam => adam_step(params, grads, self, lr, betas, eps),
            OptimKind::RAdam => radam_step(params, grads, self, lr, betas, eps),
        }
    }
}

fn update_moments<T: Real>(state: &mut OptimState<T>, grads: &[Tensor<T>], betas: (f64, f64)) {
    let (b1, b2) = (T::of(betas.0), T::of(betas.1));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    for ((m, v), g) in state.m.iter_mut().zip(state.v.iter_mut()).zip(grads) {
        for ((mi, vi), &gi) in m.iter_mut().zip(v.iter_mut()).zip(g.data()) {
            *mi = b1 * *mi + c1 * gi;
            *vi = b2 * *vi + c2 * gi * gi;
        }
    }
}

/// Bias-corrected Adam.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimState<T>,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    state.check(params, grads)?;
    state.step += 1;
    update_moments(state, grads, betas);
    let t = state.step as i32;
    let bc1 = T::of(1.0 - Float::powi(betas.0, t));
    let bc2 = T::of(1.0 - Float::powi(betas.1, t));
    let (lr, eps) = (T::of(lr), T::of(eps));
    for ((p, m), v) in params.iter_mut().zip(&state.m).zip(&state.v) {
        for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Length of the approximated simple moving average at step `t`.
pub fn radam_rho(t: u64, beta2: f64) -> f64 {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b2t = Float::powi(beta2, t as i32);
    rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t)
}

/// Variance rectification factor, or `None` while `rho_t <= 4`.
pub fn radam_rectifier(t: u64, beta2: f64) -> Option<f64> {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let rho = radam_rho(t, beta2);
    (rho > 4.0).then(|| {
        Float::sqrt(((rho - 4.0) * (rho - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho))
    })
}

/// Rectified Adam. While the rectification length is at most 4 the update
/// is the bias-corrected momentum alone.
pub fn radam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimState<T>,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    state.check(params, grads)?;
    state.step += 1;
    update_moments(state, grads, betas);
    let t = state.step;
    let bc1 = T::of(1.0 - Float::powi(betas.0, t as i32));
    let bc2 = T::of(1.0 - Float::powi(betas.1, t as i32));
    let rect = radam_rectifier(t, betas.1);
    let (lr_t, eps) = (T::of(lr), T::of(eps));
    for ((p, m), v) in params.iter_mut().zip(&state.m).zip(&state.v) {
        for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi / bc1;
            match rect {
                Some(r) => {
                    let v_hat = vi / bc2;
                    *pi -= lr_t * T::of(r) * m_hat / (v_hat.sqrt() + eps);
                }
                None => *pi -= lr_t * m_hat,
            }
        }
    }
    Ok(())
}

pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    let sum = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| {
            let x = v.f64();
            x * x
        })
        .sum::<f64>();
    Float::sqrt(sum)
}

/// Rescales all gradients by `max_norm / total` when their joint L2 norm
/// exceeds `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let total = global_norm(grads);
    if total > max_norm {
        // Rounding in T can push the rescaled norm a few ulps above the
        // ceiling; shrinking by a few epsilons keeps it at or below.
        let slack = 1.0 - 4.0 * T::epsilon().f64();
        let s = T::of(max_norm / total * slack);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    total
}

/// Learning rate halved once at each listed iteration.
pub fn halving_schedule(base_lr: f64, halve_at: &[usize], iteration: usize) -> f64 {
    let n = halve_at.iter().filter(|&&h| iteration >= h).count();
    base_lr * Float::powi(0.5f64, n as i32)
}
