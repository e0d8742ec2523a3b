//! Numerical symmetry checks for the two score networks.
//!
//! Inputs are generic: each trial takes a molecule, adds Gaussian noise at a
//! random diffusion time and recenters, so no trial sits on a planar or
//! otherwise special configuration.

use rand::seq::SliceRandom;
use rand::Rng;

use super::geom_to_topo::score_from_geometry;
use super::topo_to_geom::score_2d_to_3d;
use super::{ModelConfig, ScoreError, ATOM_ONEHOT};
use crate::autodiff::{Array, Params};
use crate::geom3d::{
    center_coordinates, mat_vec, random_rotation, transform, Mat3, Vec3, MIRROR_Z,
};
use crate::moldata::{Bond, Molecule2D, Molecule3D, MoleculePair, EDGE_CHANNELS};
use crate::sde::{standard_normal, NoiseSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymmetryKind {
    Rotation,
    Reflection,
    Permutation,
    Translation,
}

impl SymmetryKind {
    pub const ALL: [SymmetryKind; 4] = [
        SymmetryKind::Rotation,
        SymmetryKind::Reflection,
        SymmetryKind::Permutation,
        SymmetryKind::Translation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SymmetryKind::Rotation => "rotation",
            SymmetryKind::Reflection => "reflection",
            SymmetryKind::Permutation => "permutation",
            SymmetryKind::Translation => "translation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreNet {
    /// Coordinate score conditioned on a topology.
    TopoToGeom,
    /// Atom/bond score conditioned on a conformation.
    GeomToTopo,
}

impl ScoreNet {
    pub fn name(self) -> &'static str {
        match self {
            ScoreNet::TopoToGeom => "2d->3d",
            ScoreNet::GeomToTopo => "3d->2d",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryReport {
    pub kind: SymmetryKind,
    pub net: ScoreNet,
    pub trials: usize,
    /// Largest absolute deviation over trials.
    pub max_deviation: f64,
    /// Smallest deviation relative to the output norm over trials.
    pub min_relative: f64,
    /// Fraction of trials whose relative deviation exceeds the tolerance.
    pub fraction_above: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Default tolerance of each check. Reflection on the coordinate score is a
/// lower bound on the relative deviation; all others are upper bounds.
pub fn default_tolerance(kind: SymmetryKind, net: ScoreNet) -> f64 {
    match (kind, net) {
        (SymmetryKind::Rotation, ScoreNet::TopoToGeom) => 1e-6,
        (SymmetryKind::Reflection, ScoreNet::TopoToGeom) => 1e-3,
        _ => 1e-9,
    }
}

/// Relabels atoms so that new atom `k` is old atom `order[k]`.
pub fn permute_topology(topo: &Molecule2D, order: &[usize]) -> Molecule2D {
    let inv = inverse(order);
    Molecule2D {
        atoms: order.iter().map(|&a| topo.atoms[a]).collect(),
        bonds: topo
            .bonds
            .iter()
            .map(|b| Bond {
                i: inv[b.i],
                j: inv[b.j],
                features: b.features,
            })
            .collect(),
    }
}

pub fn permute_geometry(geom: &Molecule3D, order: &[usize]) -> Molecule3D {
    Molecule3D {
        atom_types: order.iter().map(|&a| geom.atom_types[a]).collect(),
        coords: order.iter().map(|&a| geom.coords[a]).collect(),
    }
}

fn inverse(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (k, &a) in order.iter().enumerate() {
        inv[a] = k;
    }
    inv
}

fn noisy_coords<R: Rng + ?Sized>(
    coords: &[Vec3],
    t: f64,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Vec<Vec3> {
    let k = sched.kernel_at(t).expect("t in range");
    let z = standard_normal(rng, coords.len() * 3);
    let noisy: Vec<Vec3> = coords
        .iter()
        .enumerate()
        .map(|(a, p)| std::array::from_fn(|c| k.mean_coef * p[c] + k.std * z[3 * a + c]))
        .collect();
    center_coordinates(&noisy)
}

fn vec_dev(a: &[Vec3], b: &[Vec3]) -> (f64, f64) {
    let mut max: f64 = 0.0;
    let mut sq = 0.0;
    let mut norm = 0.0;
    for (x, y) in a.iter().zip(b) {
        for c in 0..3 {
            let d = x[c] - y[c];
            max = max.max(d.abs());
            sq += d * d;
            norm += y[c] * y[c];
        }
    }
    (max, if norm > 0.0 { (sq / norm).sqrt() } else { 0.0 })
}

fn slice_dev(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut max: f64 = 0.0;
    let mut sq = 0.0;
    let mut norm = 0.0;
    for (x, y) in a.iter().zip(b) {
        max = max.max((x - y).abs());
        sq += (x - y) * (x - y);
        norm += y * y;
    }
    (max, if norm > 0.0 { (sq / norm).sqrt() } else { 0.0 })
}

fn random_transform<R: Rng + ?Sized>(kind: SymmetryKind, rng: &mut R) -> Mat3 {
    let q = random_rotation(rng);
    match kind {
        SymmetryKind::Reflection => {
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = (0..3).map(|k| q[i][k] * MIRROR_Z[k][j]).sum();
                }
            }
            m
        }
        _ => q,
    }
}

/// One trial: returns absolute and relative deviation.
#[allow(clippy::too_many_arguments)]
fn trial_topo_to_geom<R: Rng + ?Sized>(
    kind: SymmetryKind,
    pair: &MoleculePair,
    params: &Params,
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<(f64, f64), ScoreError> {
    let t = rng.random_range(0.05..1.0);
    let x = noisy_coords(&center_coordinates(&pair.geom.coords), t, sched, rng);
    let topo = &pair.topo;
    let base = score_2d_to_3d(topo, &x, t, params, cfg, sched)?;
    match kind {
        SymmetryKind::Rotation | SymmetryKind::Reflection => {
            let m = random_transform(kind, rng);
            let moved = score_2d_to_3d(topo, &transform(&x, &m, [0.0; 3]), t, params, cfg, sched)?;
            let expected: Vec<Vec3> = base.iter().map(|v| mat_vec(&m, *v)).collect();
            Ok(vec_dev(&moved, &expected))
        }
        SymmetryKind::Permutation => {
            let mut order: Vec<usize> = (0..x.len()).collect();
            order.shuffle(rng);
            let ptopo = permute_topology(topo, &order);
            let px: Vec<Vec3> = order.iter().map(|&a| x[a]).collect();
            let moved = score_2d_to_3d(&ptopo, &px, t, params, cfg, sched)?;
            let expected: Vec<Vec3> = order.iter().map(|&a| base[a]).collect();
            Ok(vec_dev(&moved, &expected))
        }
        SymmetryKind::Translation => {
            let shift: Vec3 = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
            let moved = center_coordinates(&transform(&x, &crate::geom3d::IDENTITY, shift));
            let out = score_2d_to_3d(topo, &moved, t, params, cfg, sched)?;
            Ok(vec_dev(&out, &base))
        }
    }
}

fn trial_geom_to_topo<R: Rng + ?Sized>(
    kind: SymmetryKind,
    pair: &MoleculePair,
    params: &Params,
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<(f64, f64), ScoreError> {
    let n = pair.num_atoms();
    let t = rng.random_range(0.05..1.0);
    let x_t = Array::matrix(n, ATOM_ONEHOT, standard_normal(rng, n * ATOM_ONEHOT));
    let upper = standard_normal(rng, n * n.saturating_sub(1) / 2 * EDGE_CHANNELS);
    let e_t = super::geom_to_topo::pairs_to_dense(&upper, n);
    let geom = &pair.geom;
    let base = score_from_geometry(geom, &x_t, &e_t, t, params, cfg, sched)?;
    let flat = |s: &super::geom_to_topo::TopoScoreValues| {
        let mut v = s.node.data().to_vec();
        v.extend_from_slice(&s.edge);
        v
    };
    match kind {
        SymmetryKind::Permutation => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let pgeom = permute_geometry(geom, &order);
            let px: Vec<f64> = order.iter().flat_map(|&a| x_t.row(a).to_vec()).collect();
            let px = Array::matrix(n, ATOM_ONEHOT, px);
            let pe = permute_dense(&e_t, n, &order);
            let moved = score_from_geometry(&pgeom, &px, &pe, t, params, cfg, sched)?;
            let node: Vec<f64> = order
                .iter()
                .flat_map(|&a| base.node.row(a).to_vec())
                .collect();
            let mut expected = node;
            expected.extend(permute_dense(&base.edge, n, &order));
            Ok(slice_dev(&flat(&moved), &expected))
        }
        _ => {
            let (m, shift) = match kind {
                SymmetryKind::Translation => (
                    crate::geom3d::IDENTITY,
                    std::array::from_fn(|_| rng.random_range(-10.0..10.0)),
                ),
                _ => (
                    random_transform(kind, rng),
                    std::array::from_fn(|_| rng.random_range(-10.0..10.0)),
                ),
            };
            let moved_geom = Molecule3D {
                atom_types: geom.atom_types.clone(),
                coords: transform(&geom.coords, &m, shift),
            };
            let moved = score_from_geometry(&moved_geom, &x_t, &e_t, t, params, cfg, sched)?;
            Ok(slice_dev(&flat(&moved), &flat(&base)))
        }
    }
}

fn permute_dense(dense: &[f64], n: usize, order: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; dense.len()];
    for a in 0..n {
        for b in 0..n {
            let src = (order[a] * n + order[b]) * EDGE_CHANNELS;
            let dst = (a * n + b) * EDGE_CHANNELS;
            out[dst..dst + EDGE_CHANNELS].copy_from_slice(&dense[src..src + EDGE_CHANNELS]);
        }
    }
    out
}

/// Runs `trials` randomized checks of `kind` on `net` over `mols` (cycled).
///
/// Reflection on the coordinate score passes when at least 95% of trials
/// deviate by more than `tol` relative to the output norm; every other check
/// passes when the largest absolute deviation stays below `tol`.
#[allow(clippy::too_many_arguments)]
pub fn check_symmetry<R: Rng + ?Sized>(
    kind: SymmetryKind,
    net: ScoreNet,
    mols: &[MoleculePair],
    params: &Params,
    cfg: &ModelConfig,
    sched: &NoiseSchedule,
    trials: usize,
    tol: f64,
    rng: &mut R,
) -> Result<SymmetryReport, ScoreError> {
    let mut max_dev: f64 = 0.0;
    let mut min_rel = f64::INFINITY;
    let mut above = 0usize;
    let mut done = 0usize;
    for k in 0..trials {
        if mols.is_empty() {
            break;
        }
        let pair = &mols[k % mols.len()];
        let (abs, rel) = match net {
            ScoreNet::TopoToGeom => trial_topo_to_geom(kind, pair, params, cfg, sched, rng)?,
            ScoreNet::GeomToTopo => trial_geom_to_topo(kind, pair, params, cfg, sched, rng)?,
        };
        max_dev = max_dev.max(abs);
        min_rel = min_rel.min(rel);
        if rel > tol {
            above += 1;
        }
        done += 1;
    }
    let fraction_above = if done > 0 {
        above as f64 / done as f64
    } else {
        0.0
    };
    let passed = done > 0
        && match (kind, net) {
            (SymmetryKind::Reflection, ScoreNet::TopoToGeom) => fraction_above >= 0.95,
            _ => max_dev < tol,
        };
    Ok(SymmetryReport {
        kind,
        net,
        trials: done,
        max_deviation: max_dev,
        min_relative: if done > 0 { min_rel } else { 0.0 },
        fraction_above,
        tolerance: tol,
        passed,
    })
}
