//! Joint atom/bond score conditioned on a conformation.
//!
//! The noisy atom one-hot matrix `X_t` and bond tensor `E_t` are scored
//! together. `H_0 = MLP(X_t) + H_3D + temb(t)`, followed by dense graph
//! convolutions whose soft adjacency is read from `E_t`. The node score is an
//! MLP over `[H_0 | ... | H_L]`. For the edge score, each layer contributes a
//! symmetrized dot-product attention logit per atom pair, and an MLP maps the
//! logits, the noisy bond channels and the radial expansion of the pair
//! distance to the five bond channels. Both outputs are preconditioned as
//! described in the parent module.
//!
//! Bond-channel inputs and outputs are stored once per unordered pair `i < j`
//! in row-major pair order, see [`pair_list`].

use super::nn::{atom_segments, column, indices, linear, mlp2, shifted_softplus, time_embedding};
use super::{batch_offsets, scaling, ModelConfig, Scaling, ScoreError, ATOM_ONEHOT};
use crate::autodiff::{Array, Binder, Graph, Params, Var};
use crate::geom3d::{distance, rbf_expand};
use crate::moldata::{MaskSpec, Molecule3D, EDGE_CHANNELS};
use crate::sde::NoiseSchedule;

/// Unordered atom pairs `(i, j)`, `i < j`, in row-major order.
pub fn pair_list(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j));
        }
    }
    out
}

/// Upper-triangle rows of a dense `n x n x 5` tensor.
pub fn dense_to_pairs(dense: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2 * EDGE_CHANNELS);
    for (i, j) in pair_list(n) {
        let at = (i * n + j) * EDGE_CHANNELS;
        out.extend_from_slice(&dense[at..at + EDGE_CHANNELS]);
    }
    out
}

/// Mirrors pair rows into a dense symmetric tensor with a zero diagonal.
pub fn pairs_to_dense(pairs: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n * EDGE_CHANNELS];
    for (p, (i, j)) in pair_list(n).into_iter().enumerate() {
        let row = &pairs[p * EDGE_CHANNELS..(p + 1) * EDGE_CHANNELS];
        for (a, c) in [(i, j), (j, i)] {
            let at = (a * n + c) * EDGE_CHANNELS;
            out[at..at + EDGE_CHANNELS].copy_from_slice(row);
        }
    }
    out
}

/// Outputs of [`build`]: `[N, 119]` node score and `[P, 5]` pair score (absent
/// when no molecule has two atoms).
pub struct TopoScore {
    pub node: Var,
    pub edge: Option<Var>,
}

/// Builds the network for a batch.
///
/// `h3d` holds the `[N, D]` conformation representations, `x_t` the
/// `N x 119` noisy atom matrix, `e_t` the noisy bond rows of every molecule's
/// pairs in batch order, and `geoms` the conditioning conformations.
#[allow(clippy::too_many_arguments)]
pub fn build(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
    h3d: Var,
    x_t: &[f64],
    e_t: &[f64],
    geoms: &[&Molecule3D],
    times: &[f64],
) -> Result<TopoScore, ScoreError> {
    let offsets = batch_offsets(geoms.iter().map(|m| m.num_atoms()));
    let total = *offsets.last().unwrap();
    if x_t.len() != total * ATOM_ONEHOT {
        return Err(ScoreError::Size {
            what: "atom matrix entries",
            expected: total * ATOM_ONEHOT,
            got: x_t.len(),
        });
    }
    let mut pairs = Vec::new();
    let mut pair_mol = Vec::new();
    for (m, geom) in geoms.iter().enumerate() {
        for (i, j) in pair_list(geom.num_atoms()) {
            pairs.push((
                offsets[m] + i,
                offsets[m] + j,
                distance(geom.coords[i], geom.coords[j]),
            ));
            pair_mol.push(m);
        }
    }
    let np = pairs.len();
    if e_t.len() != np * EDGE_CHANNELS {
        return Err(ScoreError::Size {
            what: "bond tensor entries",
            expected: np * EDGE_CHANNELS,
            got: e_t.len(),
        });
    }
    if times.len() != geoms.len() {
        return Err(ScoreError::Size {
            what: "diffusion times",
            expected: geoms.len(),
            got: times.len(),
        });
    }
    let scales = times
        .iter()
        .map(|&t| scaling(sched, t, cfg.topo_data_std))
        .collect::<Result<Vec<_>, _>>()?;
    let input_scale: Vec<f64> = scales.iter().map(|s| s.input).collect();
    let seg = atom_segments(&offsets);
    let d = cfg.hidden;

    let temb = time_embedding(g, b, "s32", times, cfg.time_freqs)?;
    let x_scaled: Vec<f64> = x_t
        .chunks_exact(ATOM_ONEHOT)
        .zip(&seg)
        .flat_map(|(row, &m)| {
            let c = input_scale[m];
            row.iter().map(move |v| v * c)
        })
        .collect();
    let x = g.constant(Array::matrix(total, ATOM_ONEHOT, x_scaled));
    let h0 = mlp2(g, b, "s32.xin", x)?;
    let h0 = g.add(h0, h3d)?;
    let te = g.gather_rows(temb, indices(seg.clone()))?;
    let h0 = g.add(h0, te)?;

    let mut hs = vec![h0];
    let mut e_in = None;
    if np > 0 {
        let e_scaled: Vec<f64> = e_t
            .chunks_exact(EDGE_CHANNELS)
            .zip(&pair_mol)
            .flat_map(|(row, &m)| {
                let c = input_scale[m];
                row.iter().map(move |v| v * c)
            })
            .collect();
        e_in = Some(g.constant(Array::matrix(np, EDGE_CHANNELS, e_scaled)));
    }
    let adjacency = match e_in {
        Some(e_in) => {
            let a = linear(g, b, "s32.adj", e_in)?;
            let a = g.sigmoid(a)?;
            let both = g.concat_rows(&[a, a])?;
            let mut cells: Vec<usize> = pairs.iter().map(|&(i, j, _)| i * total + j).collect();
            cells.extend(pairs.iter().map(|&(i, j, _)| j * total + i));
            let flat = g.scatter_add_rows(both, indices(cells), total * total)?;
            let adj = g.reshape(flat, total, total)?;
            let inv_n: Vec<f64> = seg
                .iter()
                .map(|&m| 1.0 / (offsets[m + 1] - offsets[m]) as f64)
                .collect();
            let inv_n = column(g, inv_n);
            Some(g.mul_col(adj, inv_n)?)
        }
        None => None,
    };
    for layer in 0..cfg.layers {
        let h = *hs.last().unwrap();
        let mixed = match adjacency {
            Some(adj) => {
                let ah = g.matmul(adj, h)?;
                g.add(ah, h)?
            }
            None => h,
        };
        let out = linear(g, b, &format!("s32.gcn{layer}"), mixed)?;
        hs.push(shifted_softplus(g, out)?);
    }

    let cat = g.concat_cols(&hs)?;
    let node = mlp2(g, b, "s32.node", cat)?;
    let node = precondition(g, node, x_t, &seg, &scales)?;

    let edge = match e_in {
        None => None,
        Some(e_in) => {
            let pi = indices(pairs.iter().map(|p| p.0).collect());
            let pj = indices(pairs.iter().map(|p| p.1).collect());
            let scale = 0.5 / (d as f64).sqrt();
            let mut feats = Vec::with_capacity(hs.len() + 2);
            for (layer, &h) in hs.iter().enumerate() {
                let q = linear(g, b, &format!("s32.att{layer}.q"), h)?;
                let k = linear(g, b, &format!("s32.att{layer}.k"), h)?;
                let qi = g.gather_rows(q, pi.clone())?;
                let kj = g.gather_rows(k, pj.clone())?;
                let qj = g.gather_rows(q, pj.clone())?;
                let ki = g.gather_rows(k, pi.clone())?;
                let ab = g.mul(qi, kj)?;
                let ba = g.mul(qj, ki)?;
                let s = g.add(ab, ba)?;
                let s = g.sum_cols(s)?;
                feats.push(g.scale(s, scale)?);
            }
            feats.push(e_in);
            let mut rbf = Vec::with_capacity(np * cfg.rbf.centers);
            for &(_, _, dist) in &pairs {
                rbf.extend(rbf_expand(dist, &cfg.rbf)?);
            }
            feats.push(g.constant(Array::matrix(np, cfg.rbf.centers, rbf)));
            let cat = g.concat_cols(&feats)?;
            let out = mlp2(g, b, "s32.edge", cat)?;
            Some(precondition(g, out, e_t, &pair_mol, &scales)?)
        }
    };
    Ok(TopoScore { node, edge })
}

/// `out * F + skip * noisy`, row by row, with the coefficients of each row's molecule.
fn precondition(
    g: &mut Graph,
    net: Var,
    noisy: &[f64],
    mol_of_row: &[usize],
    scales: &[Scaling],
) -> Result<Var, ScoreError> {
    let rows = g.value(net).rows();
    let cols = g.value(net).cols();
    let out = column(g, mol_of_row.iter().map(|&m| scales[m].out).collect());
    let skip = column(g, mol_of_row.iter().map(|&m| scales[m].skip).collect());
    let net = g.mul_col(net, out)?;
    let noisy = g.constant(Array::matrix(rows, cols, noisy.to_vec()));
    let noisy = g.mul_col(noisy, skip)?;
    Ok(g.add(net, noisy)?)
}

/// Largest `|E[i,j,c] - E[j,i,c]|` of a dense tensor.
pub fn asymmetry(dense: &[f64], n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            for c in 0..EDGE_CHANNELS {
                let a = dense[(i * n + j) * EDGE_CHANNELS + c];
                let b = dense[(j * n + i) * EDGE_CHANNELS + c];
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Node score `[n, 119]` and dense symmetric edge score `n x n x 5`.
#[derive(Clone, Debug, PartialEq)]
pub struct TopoScoreValues {
    pub node: Array,
    pub edge: Vec<f64>,
}

/// Scores one molecule. `h_y` is the `[n, D]` conformation representation,
/// `x_t` the `n x 119` noisy atom matrix and `e_t` the dense noisy bond tensor.
#[allow(clippy::too_many_arguments)]
pub fn score_3d_to_2d(
    h_y: &Array,
    x_t: &Array,
    e_t: &[f64],
    geom: &Molecule3D,
    t: f64,
    params: &Params,
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
) -> Result<TopoScoreValues, ScoreError> {
    let n = geom.num_atoms();
    if e_t.len() != n * n * EDGE_CHANNELS {
        return Err(ScoreError::Size {
            what: "bond tensor entries",
            expected: n * n * EDGE_CHANNELS,
            got: e_t.len(),
        });
    }
    let asym = asymmetry(e_t, n);
    if asym > 1e-9 {
        return Err(ScoreError::AsymmetricEdges(asym));
    }
    let mut g = Graph::new();
    let mut b = Binder::new(params);
    let h = g.constant(h_y.clone());
    let out = build(
        &mut g,
        &mut b,
        cfg,
        sched,
        h,
        x_t.data(),
        &dense_to_pairs(e_t, n),
        &[geom],
        &[t],
    )?;
    let edge = match out.edge {
        Some(v) => pairs_to_dense(g.value(v).data(), n),
        None => vec![0.0; n * n * EDGE_CHANNELS],
    };
    Ok(TopoScoreValues {
        node: g.value(out.node).clone(),
        edge,
    })
}

/// Encodes `geom` and scores the noisy topology in one call.
#[allow(clippy::too_many_arguments)]
pub fn score_from_geometry(
    geom: &Molecule3D,
    x_t: &Array,
    e_t: &[f64],
    t: f64,
    params: &Params,
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
) -> Result<TopoScoreValues, ScoreError> {
    let h = super::encoder3d::encode_3d(geom, params, cfg, &MaskSpec::none())?;
    score_3d_to_2d(&h, x_t, e_t, geom, t, params, cfg, sched)
}
