use std::collections::BTreeMap;

use super::{AdError, Array, Params};

/// Adam moments and hyperparameters.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: BTreeMap<String, Array>,
    second: BTreeMap<String, Array>,
}

impl OptimState {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Array> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Array> {
        self.second.get(name)
    }
}

/// One bias-corrected Adam update. Parameters without a gradient entry see a zero gradient.
///
/// Any non-finite gradient aborts the step before anything is modified.
pub fn adam_step(
    params: &mut Params,
    grads: &BTreeMap<String, Array>,
    state: &mut OptimState,
) -> Result<(), AdError> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| AdError::UnknownParam(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(AdError::ShapeMismatch {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(AdError::NonFiniteGradient(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (name, p) in params.iter_mut() {
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| Array::zeros(p.shape()));
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| Array::zeros(p.shape()));
        let g = grads.get(name);
        for i in 0..p.len() {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
            let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
            p.data_mut()[i] -= update;
        }
    }
    Ok(())
}
