//! Noise schedules with closed-form Gaussian perturbation kernels, denoising
//! targets, and reverse-time samplers.
//!
//! Time runs on `[0, 1]`. The variance-exploding schedule perturbs with
//! `x_t = x_0 + sigma(t) z`, `sigma(t) = sigma_min (sigma_max / sigma_min)^t`.
//! The variance-preserving schedule uses a linear `beta(t)` and
//! `x_t = a(t) x_0 + sqrt(1 - a(t)^2) z` with
//! `a(t) = exp(-t^2 (beta_max - beta_min) / 4 - t beta_min / 2)`.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::autodiff::Array;

#[derive(Debug, Error, PartialEq)]
pub enum SdeError {
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(&'static str),
    #[error("perturbation std is zero")]
    ZeroStd,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SdeKind {
    Ve { sigma_min: f64, sigma_max: f64 },
    Vp { beta_min: f64, beta_max: f64 },
}

/// Diffusion process plus the number of uniform discretization steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub kind: SdeKind,
    pub steps: usize,
}

/// Gaussian kernel `N(mean_coef * x0, std^2 I)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbKernel {
    pub mean_coef: f64,
    pub std: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            kind: SdeKind::Ve {
                sigma_min: 0.01,
                sigma_max: 10.0,
            },
            steps: 250,
        }
    }
}

impl NoiseSchedule {
    pub fn ve(sigma_min: f64, sigma_max: f64, steps: usize) -> Result<Self, SdeError> {
        let s = Self {
            kind: SdeKind::Ve {
                sigma_min,
                sigma_max,
            },
            steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn vp(beta_min: f64, beta_max: f64, steps: usize) -> Result<Self, SdeError> {
        let s = Self {
            kind: SdeKind::Vp { beta_min, beta_max },
            steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SdeError> {
        match self.kind {
            SdeKind::Ve {
                sigma_min,
                sigma_max,
            } => {
                if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
                    return Err(SdeError::InvalidSchedule("need 0 < sigma_min < sigma_max"));
                }
            }
            SdeKind::Vp { beta_min, beta_max } => {
                if !(beta_min > 0.0 && beta_min < beta_max && beta_max.is_finite()) {
                    return Err(SdeError::InvalidSchedule("need 0 < beta_min < beta_max"));
                }
            }
        }
        Ok(())
    }

    pub fn with_steps(self, steps: usize) -> Self {
        Self { steps, ..self }
    }

    pub fn kernel_at(&self, t: f64) -> Result<PerturbKernel, SdeError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(SdeError::TimeOutOfRange(t));
        }
        Ok(match self.kind {
            SdeKind::Ve {
                sigma_min,
                sigma_max,
            } => PerturbKernel {
                mean_coef: 1.0,
                std: sigma_min * (sigma_max / sigma_min).powf(t),
            },
            SdeKind::Vp { beta_min, beta_max } => {
                let log_a = -0.25 * t * t * (beta_max - beta_min) - 0.5 * t * beta_min;
                let a = log_a.exp();
                PerturbKernel {
                    mean_coef: a,
                    // 1 - a^2 = -expm1(2 log a), accurate near t = 0
                    std: (-(2.0 * log_a).exp_m1()).max(0.0).sqrt(),
                }
            }
        })
    }

    /// `beta(t)` of the variance-preserving schedule.
    fn beta(beta_min: f64, beta_max: f64, t: f64) -> f64 {
        beta_min + t * (beta_max - beta_min)
    }

    /// Squared diffusion coefficient `g(t)^2`.
    pub fn diffusion_sq(&self, t: f64) -> f64 {
        match self.kind {
            SdeKind::Ve {
                sigma_min,
                sigma_max,
            } => {
                let sigma = sigma_min * (sigma_max / sigma_min).powf(t);
                // d[sigma^2]/dt
                2.0 * sigma * sigma * (sigma_max / sigma_min).ln()
            }
            SdeKind::Vp { beta_min, beta_max } => Self::beta(beta_min, beta_max, t),
        }
    }

    /// Linear drift coefficient: `f(x, t) = coef * x`.
    pub fn drift_coef(&self, t: f64) -> f64 {
        match self.kind {
            SdeKind::Ve { .. } => 0.0,
            SdeKind::Vp { beta_min, beta_max } => -0.5 * Self::beta(beta_min, beta_max, t),
        }
    }

    /// Standard deviation of the sampling prior at `t = 1`.
    pub fn prior_std(&self) -> f64 {
        match self.kind {
            SdeKind::Ve { sigma_max, .. } => sigma_max,
            SdeKind::Vp { .. } => 1.0,
        }
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws `x_t = a(t) x0 + s(t) z` and returns `(x_t, z)`.
pub fn perturb<R: Rng + ?Sized>(
    x0: &[f64],
    t: f64,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>), SdeError> {
    let k = sched.kernel_at(t)?;
    let z = standard_normal(rng, x0.len());
    let xt = x0
        .iter()
        .zip(&z)
        .map(|(x, z)| k.mean_coef * x + k.std * z)
        .collect();
    Ok((xt, z))
}

/// Score of the perturbation kernel at `x_t`: `(a x0 - x_t) / s^2`.
pub fn dsm_target(x_t: &[f64], x0: &[f64], kernel: &PerturbKernel) -> Result<Vec<f64>, SdeError> {
    if x_t.len() != x0.len() {
        return Err(SdeError::LengthMismatch(x_t.len(), x0.len()));
    }
    if kernel.std == 0.0 {
        return Err(SdeError::ZeroStd);
    }
    let var = kernel.std * kernel.std;
    Ok(x_t
        .iter()
        .zip(x0)
        .map(|(xt, x0)| (kernel.mean_coef * x0 - xt) / var)
        .collect())
}

/// One reverse-time Euler–Maruyama step from `t` to `t - dt`.
pub fn predictor_step<R: Rng + ?Sized>(
    x: &[f64],
    t: f64,
    dt: f64,
    score: &[f64],
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Vec<f64> {
    debug_assert_eq!(x.len(), score.len());
    let g2 = sched.diffusion_sq(t);
    let f = sched.drift_coef(t);
    let noise = (g2 * dt).sqrt();
    x.iter()
        .zip(score)
        .map(|(&xi, &si)| {
            let z: f64 = StandardNormal.sample(rng);
            xi - (f * xi - g2 * si) * dt + noise * z
        })
        .collect()
}

/// `steps` Langevin updates `x <- x + (eps^2 / 2) score(x) + eps z`.
pub fn langevin_corrector<R, F>(
    x: &[f64],
    mut score_fn: F,
    eps: f64,
    steps: usize,
    rng: &mut R,
) -> Vec<f64>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut x = x.to_vec();
    let half = 0.5 * eps * eps;
    for _ in 0..steps {
        let s = score_fn(&x);
        for (xi, si) in x.iter_mut().zip(&s) {
            let z: f64 = StandardNormal.sample(rng);
            *xi += half * si + eps * z;
        }
    }
    x
}

/// Predictor–corrector sampler settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PcConfig {
    /// Langevin steps before each predictor step.
    pub corrector_steps: usize,
    /// Langevin step size at time `t` is `step_scale * s(t)`.
    pub step_scale: f64,
}

impl Default for PcConfig {
    fn default() -> Self {
        Self {
            corrector_steps: 1,
            step_scale: 0.1,
        }
    }
}

/// Draws from the prior and integrates the reverse SDE over `sched.steps`
/// uniform steps from `t = 1` down to `t = 0`.
///
/// At each grid time `t_i > 0` the corrector runs first, then the predictor
/// moves to `t_{i+1}`. `score_fn(x, t)` is only called with `t > 0`.
pub fn pc_sample<R, F>(
    score_fn: F,
    sched: &NoiseSchedule,
    shape: &[usize],
    cfg: &PcConfig,
    rng: &mut R,
) -> Array
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], f64) -> Vec<f64>,
{
    pc_sample_projected(score_fn, sched, shape, cfg, rng, |_| {})
}

/// [`pc_sample`] with a projection applied to the state after the prior draw
/// and after every update (used to keep point clouds centered).
pub fn pc_sample_projected<R, F, P>(
    mut score_fn: F,
    sched: &NoiseSchedule,
    shape: &[usize],
    cfg: &PcConfig,
    rng: &mut R,
    mut project: P,
) -> Array
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], f64) -> Vec<f64>,
    P: FnMut(&mut [f64]),
{
    let len: usize = shape.iter().product();
    let mut rngs = [rng];
    let mut out = pc_sample_batch(
        |xs: &[Vec<f64>], t| vec![score_fn(&xs[0], t)],
        sched,
        &[len],
        cfg,
        &mut rngs,
        |_, x: &mut [f64]| project(x),
    );
    Array::new(shape.to_vec(), out.pop().expect("one chain")).expect("sample shape")
}

/// Runs independent chains of lengths `lens` in lockstep so that one
/// `score_fn(states, t)` call scores all of them. Chain `c` draws all of its
/// noise from `rngs[c]`, so its result does not depend on the other chains.
pub fn pc_sample_batch<R, F, P>(
    mut score_fn: F,
    sched: &NoiseSchedule,
    lens: &[usize],
    cfg: &PcConfig,
    rngs: &mut [R],
    mut project: P,
) -> Vec<Vec<f64>>
where
    R: RngCore,
    F: FnMut(&[Vec<f64>], f64) -> Vec<Vec<f64>>,
    P: FnMut(usize, &mut [f64]),
{
    assert_eq!(lens.len(), rngs.len(), "one rng per chain");
    let prior = sched.prior_std();
    let mut xs: Vec<Vec<f64>> = lens
        .iter()
        .zip(rngs.iter_mut())
        .map(|(&len, rng)| {
            standard_normal(rng, len)
                .into_iter()
                .map(|z| prior * z)
                .collect()
        })
        .collect();
    for (c, x) in xs.iter_mut().enumerate() {
        project(c, x);
    }
    let n = sched.steps;
    if n == 0 {
        return xs;
    }
    let dt = 1.0 / n as f64;
    for i in 0..n {
        let t = 1.0 - i as f64 * dt;
        if cfg.corrector_steps > 0 {
            let std = sched.kernel_at(t).expect("grid time in range").std;
            let eps = cfg.step_scale * std;
            let half = 0.5 * eps * eps;
            for _ in 0..cfg.corrector_steps {
                let scores = score_fn(&xs, t);
                for (c, (x, s)) in xs.iter_mut().zip(&scores).enumerate() {
                    for (xi, si) in x.iter_mut().zip(s) {
                        let z: f64 = StandardNormal.sample(&mut rngs[c]);
                        *xi += half * si + eps * z;
                    }
                }
            }
            for (c, x) in xs.iter_mut().enumerate() {
                project(c, x);
            }
        }
        let scores = score_fn(&xs, t);
        for (c, (x, s)) in xs.iter_mut().zip(&scores).enumerate() {
            *x = predictor_step(x, t, dt, s, sched, &mut rngs[c]);
            project(c, x);
        }
    }
    xs
}
