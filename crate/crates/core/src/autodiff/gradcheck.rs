//! Central finite-difference checks of parameter gradients.
//!
//! Piecewise-linear activations make the loss non-differentiable on a set of
//! measure zero. When such a kink falls inside `[x - h, x + h]`, the central
//! difference averages two slopes and disagrees with the (one-sided) analytic
//! gradient. Those entries are recognized by their signature: the two
//! one-sided differences disagree, and the analytic value matches one of
//! them. On a smooth function the analytic value sits midway between the two
//! one-sided differences instead. Kinked entries are counted in `kinks`, not
//! in `max_rel_error`.

use std::collections::BTreeMap;

use rand::Rng;

use super::{Array, Params};

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Entries with a kink inside the difference stencil.
    pub kinks: usize,
}

/// Smallest relative split between the one-sided slopes treated as a kink.
pub const KINK_SPLIT: f64 = 1e-4;
/// At a kink the analytic value lies within this fraction of the split from
/// one side.
pub const KINK_MATCH: f64 = 0.1;

impl GradCheckReport {
    /// Smooth entries all within `tol`, and at most 1% of entries at kinks.
    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol && self.kinks * 100 <= self.checked
    }
}

/// Compares `analytic` against central differences of `loss` on a random
/// subset of parameter entries, each kept with probability `fraction`. At
/// least one entry is always checked.
pub fn check_param_gradients<R, F, E>(
    params: &Params,
    analytic: &BTreeMap<String, Array>,
    fraction: f64,
    step: f64,
    rng: &mut R,
    mut loss: F,
) -> Result<GradCheckReport, E>
where
    R: Rng + ?Sized,
    F: FnMut(&Params) -> Result<f64, E>,
{
    let mut picks: Vec<(String, usize)> = Vec::new();
    for (name, value) in params {
        for k in 0..value.len() {
            if rng.random::<f64>() < fraction {
                picks.push((name.clone(), k));
            }
        }
    }
    if picks.is_empty() {
        if let Some((name, value)) = params.iter().find(|(_, v)| !v.is_empty()) {
            picks.push((name.clone(), rng.random_range(0..value.len())));
        }
    }
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        kinks: 0,
    };
    let center = loss(params)?;
    let mut probe = params.clone();
    for (name, k) in picks {
        let base = params[&name].data()[k];
        probe.get_mut(&name).expect("picked parameter").data_mut()[k] = base + step;
        let up = loss(&probe)?;
        probe.get_mut(&name).expect("picked parameter").data_mut()[k] = base - step;
        let down = loss(&probe)?;
        probe.get_mut(&name).expect("picked parameter").data_mut()[k] = base;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.get(&name).map_or(0.0, |g| g.data()[k]);
        let err = relative_error(a, numeric);
        report.checked += 1;
        let (fwd, bwd) = ((up - center) / step, (center - down) / step);
        let split = relative_error(fwd, bwd);
        if split > KINK_SPLIT
            && relative_error(a, fwd).min(relative_error(a, bwd)) < KINK_MATCH * split
        {
            report.kinks += 1;
            continue;
        }
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((name, k));
        }
    }
    Ok(report)
}
