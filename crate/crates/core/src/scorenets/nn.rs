//! Layer helpers shared by the networks.

use std::sync::Arc;

use crate::autodiff::{AdError, Array, Binder, Graph, Indices, Var};

pub(crate) fn indices(v: Vec<usize>) -> Indices {
    Arc::from(v)
}

/// `x W + b` with parameters `<name>.w` and, if present, `<name>.b`.
pub(crate) fn linear(g: &mut Graph, b: &mut Binder, name: &str, x: Var) -> Result<Var, AdError> {
    let w = b.get(g, &format!("{name}.w"))?;
    let y = g.matmul(x, w)?;
    let bias_name = format!("{name}.b");
    if b.params().contains_key(&bias_name) {
        let bias = b.get(g, &bias_name)?;
        g.add_row(y, bias)
    } else {
        Ok(y)
    }
}

/// Two linear layers with a shifted softplus between them.
pub(crate) fn mlp2(g: &mut Graph, b: &mut Binder, name: &str, x: Var) -> Result<Var, AdError> {
    let h = linear(g, b, &format!("{name}.0"), x)?;
    let h = shifted_softplus(g, h)?;
    linear(g, b, &format!("{name}.1"), h)
}

/// `softplus(x) - ln 2`.
pub(crate) fn shifted_softplus(g: &mut Graph, x: Var) -> Result<Var, AdError> {
    let y = g.softplus(x)?;
    g.add_scalar(y, -std::f64::consts::LN_2)
}

/// Row lookup into the embedding table `name`.
pub(crate) fn embed(
    g: &mut Graph,
    b: &mut Binder,
    name: &str,
    idx: Vec<usize>,
) -> Result<Var, AdError> {
    let table = b.get(g, name)?;
    g.gather_rows(table, indices(idx))
}

/// Sinusoidal features `[sin(t w_k), cos(t w_k)]` with `freqs` frequencies
/// log-spaced between 1 and 1000.
pub fn time_features(t: f64, freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * freqs);
    for k in 0..freqs {
        let frac = if freqs > 1 {
            k as f64 / (freqs - 1) as f64
        } else {
            0.0
        };
        let w = 1000f64.powf(frac);
        out.push((t * w).sin());
        out.push((t * w).cos());
    }
    out
}

/// Per-molecule time embedding `[B, D]` from the `<prefix>.temb` MLP.
pub(crate) fn time_embedding(
    g: &mut Graph,
    b: &mut Binder,
    prefix: &str,
    times: &[f64],
    freqs: usize,
) -> Result<Var, AdError> {
    let mut data = Vec::with_capacity(times.len() * 2 * freqs);
    for &t in times {
        data.extend(time_features(t, freqs));
    }
    let feats = g.constant(Array::matrix(times.len(), 2 * freqs, data));
    mlp2(g, b, &format!("{prefix}.temb"), feats)
}

/// Column constant `[rows, 1]`.
pub(crate) fn column(g: &mut Graph, values: Vec<f64>) -> Var {
    let n = values.len();
    g.constant(Array::matrix(n, 1, values))
}

/// Mean of each molecule's rows, `[B, cols]`.
pub(crate) fn segment_mean(g: &mut Graph, x: Var, offsets: &[usize]) -> Result<Var, AdError> {
    let mut seg = Vec::with_capacity(*offsets.last().unwrap_or(&0));
    let mut inv = Vec::with_capacity(offsets.len().saturating_sub(1));
    for m in 0..offsets.len() - 1 {
        let n = offsets[m + 1] - offsets[m];
        seg.extend(std::iter::repeat_n(m, n));
        inv.push(1.0 / n.max(1) as f64);
    }
    let sums = g.scatter_add_rows(x, indices(seg), offsets.len() - 1)?;
    let inv = column(g, inv);
    g.mul_col(sums, inv)
}

/// Molecule index of every atom row.
pub(crate) fn atom_segments(offsets: &[usize]) -> Vec<usize> {
    let mut seg = Vec::with_capacity(*offsets.last().unwrap_or(&0));
    for m in 0..offsets.len() - 1 {
        seg.extend(std::iter::repeat_n(m, offsets[m + 1] - offsets[m]));
    }
    seg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_features_at_zero() {
        let f = time_features(0.0, 4);
        assert_eq!(f, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let f = time_features(0.5, 2);
        assert!((f[0] - 0.5f64.sin()).abs() < 1e-15);
        assert!((f[2] - 500f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn segment_mean_averages_rows() {
        let mut g = Graph::new();
        let x = g.constant(Array::from_rows(&[vec![1.0], vec![3.0], vec![10.0]]));
        let m = segment_mean(&mut g, x, &[0, 2, 3]).unwrap();
        assert_eq!(g.value(m).data(), &[2.0, 10.0]);
    }
}
