//! Training objectives.
//!
//! The combined loss is
//! `alpha_1 * contrastive + alpha_2 * geom + alpha_3 * topo` where
//!
//! * `geom` is denoising score matching of the coordinate score: centered
//!   Gaussian noise is added to the conformation and the network regresses
//!   the kernel score, weighted by `s(t)^2` and averaged over atoms;
//! * `topo` does the same jointly for the one-hot atom matrix and the bond
//!   tensor, each unordered pair counted once;
//! * `contrastive` is EBM-NCE between mean-pooled 2D and 3D representations,
//!   with negatives from one in-batch derangement.
//!
//! Randomness for one evaluation comes from a single `u64` seed split into
//! independent streams, so each term draws the same numbers whether it is
//! evaluated alone or inside the combined loss.

mod train;

pub use train::{loss_csv, train, EpochLoss, TrainConfig, TrainOutcome};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AdError, Array, Binder, Graph, Params, Var};
use crate::geom3d::{center_coordinates, Vec3};
use crate::moldata::{
    apply_mask_2d, apply_mask_3d, to_dense_edge_tensor, MaskSpec, Molecule2D, Molecule3D,
    MoleculePair,
};
use crate::scorenets::geom_to_topo::{self, dense_to_pairs};
use crate::scorenets::nn::segment_mean;
use crate::scorenets::{
    batch_offsets, encoder2d, encoder3d, topo_to_geom, ModelConfig, ScoreError, ATOM_ONEHOT,
};
use crate::sde::{dsm_target, standard_normal, NoiseSchedule};

/// Lower end of the training time distribution `t ~ U(t_eps, 1)`.
pub const DEFAULT_T_EPS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("loss weights must be finite, nonnegative and not all zero")]
    Weights,
    #[error("contrastive loss needs at least two molecules per batch, got {0}")]
    BatchTooSmall(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("non-finite loss {value} at epoch {epoch}, step {step}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        value: f64,
    },
    #[error("invalid training config: {0}")]
    Config(String),
}

impl From<AdError> for ObjectiveError {
    fn from(e: AdError) -> Self {
        ObjectiveError::Score(e.into())
    }
}

/// Coefficients of the contrastive, 2D-to-3D and 3D-to-2D terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub contrastive: f64,
    pub geom: f64,
    pub topo: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            contrastive: 1.0,
            geom: 1.0,
            topo: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(contrastive: f64, geom: f64, topo: f64) -> Result<Self, ObjectiveError> {
        let w = [contrastive, geom, topo];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().all(|v| *v == 0.0) {
            return Err(ObjectiveError::Weights);
        }
        Ok(Self {
            contrastive,
            geom,
            topo,
        })
    }
}

/// Random streams of one loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Mask = 0,
    Contrastive = 1,
    Geom = 2,
    Topo = 3,
}

/// Independent generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Molecules of one step together with their masked views.
pub struct Batch<'a> {
    pub pairs: Vec<&'a MoleculePair>,
    pub topo_views: Vec<Molecule2D>,
    pub geom_views: Vec<Molecule3D>,
}

impl<'a> Batch<'a> {
    /// Masks each molecule's topology and geometry independently with `ratio`.
    pub fn new<R: Rng + ?Sized>(
        pairs: Vec<&'a MoleculePair>,
        ratio: f64,
        rng: &mut R,
    ) -> Result<Self, ObjectiveError> {
        if pairs.is_empty() {
            return Err(ObjectiveError::EmptyBatch);
        }
        let mut topo_views = Vec::with_capacity(pairs.len());
        let mut geom_views = Vec::with_capacity(pairs.len());
        for p in &pairs {
            let geom = Molecule3D {
                atom_types: p.geom.atom_types.clone(),
                coords: center_coordinates(&p.geom.coords),
            };
            topo_views.push(apply_mask_2d(&p.topo, &MaskSpec::new(ratio, rng.next_u64())).0);
            geom_views.push(apply_mask_3d(&geom, &MaskSpec::new(ratio, rng.next_u64())).0);
        }
        Ok(Self {
            pairs,
            topo_views,
            geom_views,
        })
    }

    /// Batch without masking.
    pub fn unmasked(pairs: Vec<&'a MoleculePair>) -> Result<Self, ObjectiveError> {
        Self::new(pairs, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn offsets(&self) -> Vec<usize> {
        batch_offsets(self.pairs.iter().map(|p| p.num_atoms()))
    }
}

fn draw_time<R: Rng + ?Sized>(rng: &mut R, t_eps: f64) -> f64 {
    rng.random_range(t_eps..1.0)
}

/// `sum_rows(w_i * (score_i - target_i)^2)` as a scalar, where each row weight is
/// `s(t)^2 / (B n_m)` of its molecule.
fn weighted_sq(
    g: &mut Graph,
    score: Var,
    target: Vec<f64>,
    row_scale: Vec<f64>,
) -> Result<Var, AdError> {
    let cols = g.value(score).cols();
    let rows = g.value(score).rows();
    let target = g.constant(Array::matrix(rows, cols, target));
    let diff = g.sub(score, target)?;
    let w = g.constant(Array::matrix(rows, 1, row_scale));
    let diff = g.mul_col(diff, w)?;
    let sq = g.mul(diff, diff)?;
    g.sum(sq)
}

/// Denoising loss of the coordinate score for a batch.
#[allow(clippy::too_many_arguments)]
pub fn geom_loss_graph<R: Rng + ?Sized>(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
    batch: &Batch,
    h2d: Var,
    t_eps: f64,
    rng: &mut R,
) -> Result<Var, ObjectiveError> {
    let topos: Vec<&Molecule2D> = batch.pairs.iter().map(|p| &p.topo).collect();
    geom_dsm_loss(g, sched, batch, t_eps, rng, |g, noisy, times| {
        Ok(topo_to_geom::build(
            g, b, cfg, sched, h2d, &topos, noisy, times,
        )?)
    })
}

/// Coordinate denoising loss around an arbitrary score. `score(g, x_t, t)`
/// receives the centered noisy coordinates of the whole batch and one time
/// per molecule, and returns a `[N, 3]` node.
pub fn geom_dsm_loss<R, S>(
    g: &mut Graph,
    sched: &NoiseSchedule,
    batch: &Batch,
    t_eps: f64,
    rng: &mut R,
    score: S,
) -> Result<Var, ObjectiveError>
where
    R: Rng + ?Sized,
    S: FnOnce(&mut Graph, &[Vec3], &[f64]) -> Result<Var, ObjectiveError>,
{
    let nb = batch.len() as f64;
    let mut times = Vec::with_capacity(batch.len());
    let mut noisy: Vec<Vec3> = Vec::new();
    let mut target = Vec::new();
    let mut row_scale = Vec::new();
    for p in &batch.pairs {
        let n = p.num_atoms();
        let t = draw_time(rng, t_eps);
        let k = sched.kernel_at(t).map_err(ScoreError::from)?;
        let z = standard_normal(rng, 3 * n);
        let z: Vec<Vec3> = center_coordinates(
            &z.chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect::<Vec<_>>(),
        );
        let x0 = center_coordinates(&p.geom.coords);
        let xt: Vec<Vec3> = x0
            .iter()
            .zip(&z)
            .map(|(x, z)| std::array::from_fn(|c| k.mean_coef * x[c] + k.std * z[c]))
            .collect();
        let flat_x0: Vec<f64> = x0.iter().flatten().copied().collect();
        let flat_xt: Vec<f64> = xt.iter().flatten().copied().collect();
        target.extend(dsm_target(&flat_xt, &flat_x0, &k).map_err(ScoreError::from)?);
        row_scale.extend(std::iter::repeat_n(k.std / (nb * n as f64).sqrt(), n));
        noisy.extend(center_coordinates(&xt));
        times.push(t);
    }
    let score = score(g, &noisy, &times)?;
    Ok(weighted_sq(g, score, target, row_scale)?)
}

/// Clean one-hot atom matrix rows of a topology.
pub fn atom_onehot(topo: &Molecule2D) -> Vec<f64> {
    let mut x = vec![0.0; topo.num_atoms() * ATOM_ONEHOT];
    for (a, atom) in topo.atoms.iter().enumerate() {
        x[a * ATOM_ONEHOT + atom.atom_type() as usize] = 1.0;
    }
    x
}

/// Denoising loss of the joint atom/bond score for a batch.
#[allow(clippy::too_many_arguments)]
pub fn topo_loss_graph<R: Rng + ?Sized>(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
    batch: &Batch,
    h3d: Var,
    t_eps: f64,
    rng: &mut R,
) -> Result<Var, ObjectiveError> {
    let geoms: Vec<&Molecule3D> = batch.geom_views.iter().collect();
    topo_dsm_loss(g, sched, batch, t_eps, rng, |g, xt, et, times| {
        let out = geom_to_topo::build(g, b, cfg, sched, h3d, xt, et, &geoms, times)?;
        Ok((out.node, out.edge))
    })
}

/// Atom/bond denoising loss around an arbitrary score. `score(g, X_t, E_t, t)`
/// receives the noisy one-hot atom rows (`[N, 119]` flattened), the noisy
/// pair rows in `pair_list` order (`[P, 5]` flattened) and one time per
/// molecule. It returns the node score and, when any molecule has a pair,
/// the pair score.
pub fn topo_dsm_loss<R, S>(
    g: &mut Graph,
    sched: &NoiseSchedule,
    batch: &Batch,
    t_eps: f64,
    rng: &mut R,
    score: S,
) -> Result<Var, ObjectiveError>
where
    R: Rng + ?Sized,
    S: FnOnce(&mut Graph, &[f64], &[f64], &[f64]) -> Result<(Var, Option<Var>), ObjectiveError>,
{
    let nb = batch.len() as f64;
    let mut times = Vec::with_capacity(batch.len());
    let (mut xt_all, mut et_all) = (Vec::new(), Vec::new());
    let (mut tx, mut te) = (Vec::new(), Vec::new());
    let (mut wx, mut we) = (Vec::new(), Vec::new());
    for p in &batch.pairs {
        let n = p.num_atoms();
        let t = draw_time(rng, t_eps);
        let k = sched.kernel_at(t).map_err(ScoreError::from)?;
        let x0 = atom_onehot(&p.topo);
        let e0 = dense_to_pairs(&to_dense_edge_tensor(&p.topo), n);
        let zx = standard_normal(rng, x0.len());
        let ze = standard_normal(rng, e0.len());
        let xt: Vec<f64> = x0
            .iter()
            .zip(&zx)
            .map(|(x, z)| k.mean_coef * x + k.std * z)
            .collect();
        let et: Vec<f64> = e0
            .iter()
            .zip(&ze)
            .map(|(x, z)| k.mean_coef * x + k.std * z)
            .collect();
        tx.extend(dsm_target(&xt, &x0, &k).map_err(ScoreError::from)?);
        te.extend(dsm_target(&et, &e0, &k).map_err(ScoreError::from)?);
        let w = k.std / (nb * n as f64).sqrt();
        wx.extend(std::iter::repeat_n(w, n));
        we.extend(std::iter::repeat_n(w, n * n.saturating_sub(1) / 2));
        xt_all.extend(xt);
        et_all.extend(et);
        times.push(t);
    }
    let (node, edge) = score(g, &xt_all, &et_all, &times)?;
    let node = weighted_sq(g, node, tx, wx)?;
    match edge {
        Some(edge) => {
            let edge = weighted_sq(g, edge, te, we)?;
            Ok(g.add(node, edge)?)
        }
        None => Ok(node),
    }
}

/// A permutation of `0..n` without fixed points, `n >= 2`.
pub fn derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return p;
        }
    }
}

/// `mean(softplus(-pos)) + mean(softplus(neg))` for `[B, 1]` logit columns.
pub fn nce_from_logits(g: &mut Graph, pos: Var, neg: Var) -> Result<Var, AdError> {
    let np = g.scale(pos, -1.0)?;
    let lp = g.softplus(np)?;
    let lp = g.mean(lp)?;
    let ln = g.softplus(neg)?;
    let ln = g.mean(ln)?;
    g.add(lp, ln)
}

/// EBM-NCE loss value for explicit logits.
pub fn ebm_nce_value(pos: &[f64], neg: &[f64]) -> Result<f64, ObjectiveError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let mut g = Graph::new();
    let p = g.constant(Array::matrix(pos.len(), 1, pos.to_vec()));
    let n = g.constant(Array::matrix(neg.len(), 1, neg.to_vec()));
    let l = nce_from_logits(&mut g, p, n)?;
    Ok(g.value(l).item().expect("scalar"))
}

/// EBM-NCE on pooled `[B, D]` representations with projection heads.
pub fn nce_graph<R: Rng + ?Sized>(
    g: &mut Graph,
    b: &mut Binder,
    pooled2d: Var,
    pooled3d: Var,
    rng: &mut R,
) -> Result<Var, ObjectiveError> {
    let n = g.value(pooled2d).rows();
    if n < 2 {
        return Err(ObjectiveError::BatchTooSmall(n));
    }
    let perm = derangement(n, rng);
    let w2 = b.get(g, "nce.p2d.w")?;
    let b2 = b.get(g, "nce.p2d.b")?;
    let w3 = b.get(g, "nce.p3d.w")?;
    let b3 = b.get(g, "nce.p3d.b")?;
    let p2 = g.matmul(pooled2d, w2)?;
    let p2 = g.add_row(p2, b2)?;
    let p3 = g.matmul(pooled3d, w3)?;
    let p3 = g.add_row(p3, b3)?;
    let pos = g.mul(p2, p3)?;
    let pos = g.sum_cols(pos)?;
    let shuffled = g.gather_rows(p3, perm.into())?;
    let neg = g.mul(p2, shuffled)?;
    let neg = g.sum_cols(neg)?;
    Ok(nce_from_logits(g, pos, neg)?)
}

/// Scalar nodes of one combined-loss graph. Terms with zero weight are not built.
pub struct LossVars {
    pub total: Var,
    pub contrastive: Option<Var>,
    pub geom: Option<Var>,
    pub topo: Option<Var>,
}

/// Component values of one evaluation; skipped terms read 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub contrastive: f64,
    pub geom: f64,
    pub topo: f64,
}

impl LossVars {
    pub fn values(&self, g: &Graph) -> LossValues {
        let get = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item().expect("scalar"));
        LossValues {
            total: get(Some(self.total)),
            contrastive: get(self.contrastive),
            geom: get(self.geom),
            topo: get(self.topo),
        }
    }
}

/// Builds the weighted sum of the three objectives.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_graph(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
    batch: &Batch,
    weights: &LossWeights,
    t_eps: f64,
    seed: u64,
) -> Result<LossVars, ObjectiveError> {
    let need2d = weights.contrastive > 0.0 || weights.geom > 0.0;
    let need3d = weights.contrastive > 0.0 || weights.topo > 0.0;
    let topo_views: Vec<&Molecule2D> = batch.topo_views.iter().collect();
    let geom_views: Vec<&Molecule3D> = batch.geom_views.iter().collect();
    let h2d = if need2d {
        Some(encoder2d::build(g, b, cfg, &topo_views)?)
    } else {
        None
    };
    let h3d = if need3d {
        Some(encoder3d::build(g, b, cfg, &geom_views)?)
    } else {
        None
    };

    let mut terms = Vec::new();
    let mut vars = LossVars {
        total: g.constant(Array::scalar(0.0)),
        contrastive: None,
        geom: None,
        topo: None,
    };
    if weights.contrastive > 0.0 {
        let offsets = batch.offsets();
        let p2 = segment_mean(g, h2d.expect("2d encoder"), &offsets)?;
        let p3 = segment_mean(g, h3d.expect("3d encoder"), &offsets)?;
        let l = nce_graph(g, b, p2, p3, &mut stream_rng(seed, Stream::Contrastive))?;
        vars.contrastive = Some(l);
        terms.push(g.scale(l, weights.contrastive)?);
    }
    if weights.geom > 0.0 {
        let l = geom_loss_graph(
            g,
            b,
            cfg,
            sched,
            batch,
            h2d.expect("2d encoder"),
            t_eps,
            &mut stream_rng(seed, Stream::Geom),
        )?;
        vars.geom = Some(l);
        terms.push(g.scale(l, weights.geom)?);
    }
    if weights.topo > 0.0 {
        let l = topo_loss_graph(
            g,
            b,
            cfg,
            sched,
            batch,
            h3d.expect("3d encoder"),
            t_eps,
            &mut stream_rng(seed, Stream::Topo),
        )?;
        vars.topo = Some(l);
        terms.push(g.scale(l, weights.topo)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    vars.total = total;
    Ok(vars)
}

/// Value and parameter gradients of a scalar loss.
pub type LossAndGrads = (f64, BTreeMap<String, Array>);

fn finish(g: &Graph, loss: Var) -> Result<LossAndGrads, ObjectiveError> {
    let grads = g.backward(loss)?.into_named();
    Ok((g.value(loss).item().expect("scalar"), grads))
}

/// Coordinate denoising loss alone, drawing from `rng`.
pub fn loss_2d_to_3d<R: Rng + ?Sized>(
    batch: &Batch,
    params: &Params,
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
    t_eps: f64,
    rng: &mut R,
) -> Result<LossAndGrads, ObjectiveError> {
    let mut g = Graph::new();
    let mut b = Binder::new(params);
    let views: Vec<&Molecule2D> = batch.topo_views.iter().collect();
    let h = encoder2d::build(&mut g, &mut b, cfg, &views)?;
    let l = geom_loss_graph(&mut g, &mut b, cfg, sched, batch, h, t_eps, rng)?;
    finish(&g, l)
}

/// Atom/bond denoising loss alone, drawing from `rng`.
pub fn loss_3d_to_2d<R: Rng + ?Sized>(
    batch: &Batch,
    params: &Params,
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
    t_eps: f64,
    rng: &mut R,
) -> Result<LossAndGrads, ObjectiveError> {
    let mut g = Graph::new();
    let mut b = Binder::new(params);
    let views: Vec<&Molecule3D> = batch.geom_views.iter().collect();
    let h = encoder3d::build(&mut g, &mut b, cfg, &views)?;
    let l = topo_loss_graph(&mut g, &mut b, cfg, sched, batch, h, t_eps, rng)?;
    finish(&g, l)
}

/// EBM-NCE on pooled `[B, D]` representations, drawing the negatives from `rng`.
pub fn ebm_nce_loss<R: Rng + ?Sized>(
    pooled2d: &Array,
    pooled3d: &Array,
    params: &Params,
    rng: &mut R,
) -> Result<LossAndGrads, ObjectiveError> {
    let mut g = Graph::new();
    let mut b = Binder::new(params);
    let p2 = g.input("pooled2d", pooled2d.clone())?;
    let p3 = g.input("pooled3d", pooled3d.clone())?;
    let l = nce_graph(&mut g, &mut b, p2, p3, rng)?;
    finish(&g, l)
}

/// Combined loss with its components and gradients.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    batch: &Batch,
    params: &Params,
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
    weights: &LossWeights,
    t_eps: f64,
    seed: u64,
) -> Result<(LossValues, BTreeMap<String, Array>), ObjectiveError> {
    let mut g = Graph::new();
    let mut b = Binder::new(params);
    let vars = total_loss_graph(&mut g, &mut b, cfg, sched, batch, weights, t_eps, seed)?;
    let grads = g.backward(vars.total)?.into_named();
    Ok((vars.values(&g), grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 0.0).is_err());
        assert!(LossWeights::new(f64::NAN, 1.0, 0.0).is_err());
        assert!(LossWeights::new(0.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn nce_boundary_values() {
        let zero = ebm_nce_value(&[0.0; 4], &[0.0; 4]).unwrap();
        assert!((zero - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let sat = ebm_nce_value(&[20.0; 4], &[-20.0; 4]).unwrap();
        assert!(sat < 1e-6);
    }

    #[test]
    fn derangement_has_no_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 2..10 {
            let p = derangement(n, &mut rng);
            let mut sorted = p.clone();
            sorted.sort();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            assert!(p.iter().enumerate().all(|(i, &j)| i != j));
        }
    }

    #[test]
    fn streams_are_independent() {
        let a = stream_rng(5, Stream::Geom).next_u64();
        let b = stream_rng(5, Stream::Topo).next_u64();
        assert_ne!(a, b);
        assert_eq!(a, stream_rng(5, Stream::Geom).next_u64());
    }
}
