//! Coordinate score conditioned on a topology.
//!
//! For every ordered pair `(i, j)` that is bonded or closer than the cutoff on
//! the noisy geometry, the network builds the local frame of `(r_i, r_j)` and
//! an invariant edge feature
//!
//! ```text
//! e_ij = Lin(rbf(d_ij)) * MLP(h_i, h_j, bond_ij, hop_ij) + Lin(proj_ij) + temb(t)
//! ```
//!
//! where `proj_ij` stacks the frame coordinates of `r_i - r_j`, `r_i` and
//! `r_j`. Attention layers mix edges that share the atom `i`, each pair
//! weighted by `tanh(q . k / sqrt(D))` and averaged over the shared atom's
//! edges without softmax normalization. A head maps
//! each edge to three scalars `c_ij`. The score is
//! `F_i = sum_j sum_k c_ij,k e_k(i, j)`, combined with the noisy coordinates
//! as described in the parent module. Because `e2` is a pseudo-vector, `F`
//! rotates with the input but is not mirrored with it. Pairs whose frame is degenerate contribute nothing.

use super::nn::{atom_segments, column, indices, linear, mlp2, shifted_softplus, time_embedding};
use super::{
    batch_offsets, scaling, FrameMode, ModelConfig, ScoreError, PAIR_BOND_CLASSES, PAIR_HOP_CLASSES,
};
use crate::autodiff::{Array, Binder, Graph, Params, Var};
use crate::geom3d::{build_local_frame, distance, project, rbf_expand, sub, Vec3};
use crate::moldata::Molecule2D;
use crate::sde::NoiseSchedule;

/// Largest allowed per-axis mean of input coordinates.
pub const CENTER_TOL: f64 = 1e-6;

/// Constant per-edge data for one batch.
pub(crate) struct Edges {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub molecule: Vec<usize>,
    pub axes: Vec<[Vec3; 3]>,
    pub proj: Vec<f64>,
    pub rbf: Vec<f64>,
    pub pair: Vec<f64>,
}

fn pair_classes(topo: &Molecule2D) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let n = topo.num_atoms();
    let mut bond = vec![vec![0usize; n]; n];
    for b in &topo.bonds {
        bond[b.i][b.j] = 1 + b.bond_type() as usize;
        bond[b.j][b.i] = 1 + b.bond_type() as usize;
    }
    let hop = topo
        .hop_distances()
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|h| h.clamp(1, PAIR_HOP_CLASSES) - 1)
                .collect()
        })
        .collect();
    (bond, hop)
}

pub(crate) fn build_edges(
    cfg: &ModelConfig,
    topos: &[&Molecule2D],
    coords: &[Vec3],
    input_scale: &[f64],
) -> Result<Edges, ScoreError> {
    let offsets = batch_offsets(topos.iter().map(|m| m.num_atoms()));
    let mut e = Edges {
        src: Vec::new(),
        dst: Vec::new(),
        molecule: Vec::new(),
        axes: Vec::new(),
        proj: Vec::new(),
        rbf: Vec::new(),
        pair: Vec::new(),
    };
    for (m, topo) in topos.iter().enumerate() {
        let (bond, hop) = pair_classes(topo);
        let r = &coords[offsets[m]..offsets[m + 1]];
        let c = input_scale[m];
        for i in 0..r.len() {
            for j in 0..r.len() {
                if i == j {
                    continue;
                }
                let d = distance(r[i], r[j]);
                if d >= cfg.cutoff && bond[i][j] == 0 {
                    continue;
                }
                let Ok(frame) = build_local_frame(r[i], r[j]) else {
                    continue;
                };
                e.src.push(offsets[m] + i);
                e.dst.push(offsets[m] + j);
                e.molecule.push(m);
                e.axes.push(frame.axes());
                for v in [sub(r[i], r[j]), r[i], r[j]] {
                    e.proj.extend(project(v, &frame).map(|x| x * c));
                }
                e.rbf.extend(rbf_expand(d, &cfg.rbf)?);
                let mut onehot = [0.0; PAIR_BOND_CLASSES + PAIR_HOP_CLASSES];
                onehot[bond[i][j]] = 1.0;
                onehot[PAIR_BOND_CLASSES + hop[i][j]] = 1.0;
                e.pair.extend(onehot);
            }
        }
    }
    Ok(e)
}

/// Checks that each molecule's coordinates have zero mean.
pub fn check_centered(coords: &[Vec3], offsets: &[usize]) -> Result<(), ScoreError> {
    for m in 0..offsets.len() - 1 {
        let r = &coords[offsets[m]..offsets[m + 1]];
        let n = r.len().max(1) as f64;
        for k in 0..3 {
            let mean = r.iter().map(|p| p[k]).sum::<f64>() / n;
            if mean.abs() > CENTER_TOL {
                return Err(ScoreError::NotCentered {
                    molecule: m,
                    offset: mean.abs(),
                });
            }
        }
    }
    Ok(())
}

/// Builds the score network for a batch.
///
/// `h2d` holds the `[N, D]` topology representations, `coords` the `N` noisy
/// centered positions and `times` one diffusion time per molecule. Returns the
/// `[N, 3]` score.
#[allow(clippy::too_many_arguments)]
pub fn build(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
    h2d: Var,
    topos: &[&Molecule2D],
    coords: &[Vec3],
    times: &[f64],
) -> Result<Var, ScoreError> {
    let offsets = batch_offsets(topos.iter().map(|m| m.num_atoms()));
    let total = *offsets.last().unwrap();
    if coords.len() != total {
        return Err(ScoreError::Size {
            what: "coordinate rows",
            expected: total,
            got: coords.len(),
        });
    }
    if times.len() != topos.len() {
        return Err(ScoreError::Size {
            what: "diffusion times",
            expected: topos.len(),
            got: times.len(),
        });
    }
    check_centered(coords, &offsets)?;
    let scales = times
        .iter()
        .map(|&t| scaling(sched, t, cfg.geom_data_std))
        .collect::<Result<Vec<_>, _>>()?;
    let input_scale: Vec<f64> = scales.iter().map(|s| s.input).collect();
    let seg = atom_segments(&offsets);
    let flat: Vec<f64> = coords.iter().flatten().copied().collect();
    let skip = g.constant(Array::matrix(total, 3, flat));
    let skip_coef = column(g, seg.iter().map(|&m| scales[m].skip).collect());
    let skip = g.mul_col(skip, skip_coef)?;

    let edges = build_edges(cfg, topos, coords, &input_scale)?;
    let ne = edges.src.len();
    if ne == 0 {
        return Ok(skip);
    }
    let d = cfg.hidden;
    let src = indices(edges.src.clone());
    let dst = indices(edges.dst.clone());

    let temb = time_embedding(g, b, "s23", times, cfg.time_freqs)?;

    let hs = linear(g, b, "s23.pair.src", h2d)?;
    let hd = linear(g, b, "s23.pair.dst", h2d)?;
    let hs = g.gather_rows(hs, src.clone())?;
    let hd = g.gather_rows(hd, dst)?;
    let pair = g.constant(Array::matrix(
        ne,
        PAIR_BOND_CLASSES + PAIR_HOP_CLASSES,
        edges.pair,
    ));
    let pf = linear(g, b, "s23.pair.feat", pair)?;
    let e2d = g.add(hs, hd)?;
    let e2d = g.add(e2d, pf)?;
    let e2d = shifted_softplus(g, e2d)?;
    let e2d = linear(g, b, "s23.pair.1", e2d)?;

    let proj = g.constant(Array::matrix(ne, 9, edges.proj));
    let e3d = linear(g, b, "s23.proj", proj)?;
    let rbf = g.constant(Array::matrix(ne, cfg.rbf.centers, edges.rbf));
    let radial = linear(g, b, "s23.rbf", rbf)?;
    let te = g.gather_rows(temb, indices(edges.molecule.clone()))?;
    let e = g.mul(radial, e2d)?;
    let e = g.add(e, e3d)?;
    let mut e = g.add(e, te)?;

    // edges are emitted grouped by their source atom
    let mut starts = vec![0];
    for k in 1..ne {
        if edges.src[k] != edges.src[k - 1] {
            starts.push(k);
        }
    }
    starts.push(ne);
    let (mut pa, mut pb) = (Vec::new(), Vec::new());
    let mut inv_deg = vec![0.0; ne];
    for w in starts.windows(2) {
        for a in w[0]..w[1] {
            inv_deg[a] = 1.0 / (w[1] - w[0]) as f64;
            for bb in w[0]..w[1] {
                pa.push(a);
                pb.push(bb);
            }
        }
    }
    let pa = indices(pa);
    let pb = indices(pb);
    let inv_deg = column(g, inv_deg);
    let att_scale = 1.0 / (d as f64).sqrt();
    for layer in 0..cfg.attn_layers {
        let p = format!("s23.att{layer}");
        let q = linear(g, b, &format!("{p}.q"), e)?;
        let k = linear(g, b, &format!("{p}.k"), e)?;
        let v = linear(g, b, &format!("{p}.v"), e)?;
        let qa = g.gather_rows(q, pa.clone())?;
        let kb = g.gather_rows(k, pb.clone())?;
        let logits = g.mul(qa, kb)?;
        let logits = g.sum_cols(logits)?;
        let logits = g.scale(logits, att_scale)?;
        let logits = g.tanh(logits)?;
        let vb = g.gather_rows(v, pb.clone())?;
        let msg = g.mul_col(vb, logits)?;
        let agg = g.scatter_add_rows(msg, pa.clone(), ne)?;
        let agg = g.mul_col(agg, inv_deg)?;
        let upd = linear(g, b, &format!("{p}.o"), agg)?;
        let upd = shifted_softplus(g, upd)?;
        e = g.add(e, upd)?;
    }
    let coef = mlp2(g, b, "s23.head", e)?;

    let mut vec_sum = None;
    for k in 0..3 {
        if k == 1 && cfg.frame_mode == FrameMode::DropPseudo {
            continue;
        }
        let axis: Vec<f64> = edges.axes.iter().flat_map(|ax| ax[k]).collect();
        let axis = g.constant(Array::matrix(ne, 3, axis));
        let ck = g.select_cols(coef, indices(vec![k]))?;
        let term = g.mul_col(axis, ck)?;
        vec_sum = Some(match vec_sum {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    let per_atom = g.scatter_add_rows(vec_sum.expect("frame axes"), src, total)?;
    let out_coef = column(g, seg.iter().map(|&m| scales[m].out).collect());
    let net = g.mul_col(per_atom, out_coef)?;
    Ok(g.add(net, skip)?)
}

/// Score of one molecule at diffusion time `t`; `coords` must be centered.
pub fn score_2d_to_3d(
    topo: &Molecule2D,
    coords: &[Vec3],
    t: f64,
    params: &Params,
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
) -> Result<Vec<Vec3>, ScoreError> {
    topo.validate()?;
    let mut g = Graph::new();
    let mut b = Binder::new(params);
    let h = super::encoder2d::build(&mut g, &mut b, cfg, &[topo])?;
    let s = build(&mut g, &mut b, cfg, sched, h, &[topo], coords, &[t])?;
    Ok(g.value(s)
        .data()
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect())
}
