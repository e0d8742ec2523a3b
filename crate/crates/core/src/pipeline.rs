//! Generation in both directions with trained score networks.
//!
//! Conformations are sampled by running the predictor–corrector sampler on
//! the coordinate score, recentering after every update. Topologies are
//! sampled by reverse-diffusing the atom matrix and the bond rows of every
//! unordered pair jointly and taking the argmax of each row.
//!
//! Every chain owns a generator derived from `(seed, chain index)`, so results
//! do not depend on how chains are grouped into batches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Array, Binder, Graph, Params};
use crate::geom3d::{center_coordinates, Vec3};
use crate::moldata::{derive_topology, Bond, Molecule2D, Molecule3D, EDGE_CHANNELS, NO_BOND};
use crate::objectives::Stream;
use crate::scorenets::geom_to_topo::{self, pair_list};
use crate::scorenets::{encoder2d, encoder3d, topo_to_geom, ModelConfig, ScoreError, ATOM_ONEHOT};
use crate::sde::{pc_sample_batch, NoiseSchedule, PcConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleConfig {
    pub pc: PcConfig,
    /// Chains scored together in one network call.
    pub batch_size: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            pc: PcConfig::default(),
            batch_size: 32,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of chain `index` under the run seed.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

fn chain_rng(seed: u64, index: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, index as u64));
    rng.set_stream(stream as u64);
    rng
}

fn center_flat(x: &mut [f64]) {
    let n = (x.len() / 3).max(1) as f64;
    for c in 0..3 {
        let mean = x.iter().skip(c).step_by(3).sum::<f64>() / n;
        for v in x.iter_mut().skip(c).step_by(3) {
            *v -= mean;
        }
    }
}

fn to_points(x: &[f64]) -> Vec<Vec3> {
    x.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Draws `per_molecule` conformations for each topology. Entry `m` of the
/// result holds the conformations of `topos[m]`, all centered.
pub fn sample_conformations(
    topos: &[Molecule2D],
    per_molecule: usize,
    params: &Params,
    model: &ModelConfig,
    sched: &NoiseSchedule,
    cfg: &SampleConfig,
    seed: u64,
) -> Result<Vec<Vec<Molecule3D>>, ScoreError> {
    for t in topos {
        t.validate()?;
    }
    if cfg.batch_size == 0 {
        return Err(ScoreError::Config(
            "sample batch size must be positive".into(),
        ));
    }
    let jobs: Vec<usize> = (0..topos.len())
        .flat_map(|m| std::iter::repeat_n(m, per_molecule))
        .collect();
    let mut out: Vec<Vec<Molecule3D>> = topos
        .iter()
        .map(|_| Vec::with_capacity(per_molecule))
        .collect();
    for (chunk_idx, chunk) in jobs.chunks(cfg.batch_size).enumerate() {
        let first = chunk_idx * cfg.batch_size;
        let mols: Vec<&Molecule2D> = chunk.iter().map(|&m| &topos[m]).collect();
        let h2d = {
            let mut g = Graph::new();
            let mut b = Binder::new(params);
            let h = encoder2d::build(&mut g, &mut b, model, &mols)?;
            g.value(h).clone()
        };
        let lens: Vec<usize> = mols.iter().map(|m| 3 * m.num_atoms()).collect();
        let mut rngs: Vec<ChaCha8Rng> = (0..chunk.len())
            .map(|c| chain_rng(seed, first + c, Stream::Geom))
            .collect();
        let mut failure = None;
        let states = pc_sample_batch(
            |xs: &[Vec<f64>], t| {
                let fallback = || xs.iter().map(|x| vec![0.0; x.len()]).collect();
                if failure.is_some() {
                    return fallback();
                }
                match score_conformations(params, model, sched, &h2d, &mols, xs, t) {
                    Ok(s) => s,
                    Err(e) => {
                        failure = Some(e);
                        fallback()
                    }
                }
            },
            sched,
            &lens,
            &cfg.pc,
            &mut rngs,
            |_, x: &mut [f64]| center_flat(x),
        );
        if let Some(e) = failure {
            return Err(e);
        }
        for (&m, x) in chunk.iter().zip(states) {
            let geom = Molecule3D {
                atom_types: topos[m].atoms.iter().map(|a| a.atom_type()).collect(),
                coords: center_coordinates(&to_points(&x)),
            };
            geom.validate()?;
            out[m].push(geom);
        }
    }
    Ok(out)
}

fn score_conformations(
    params: &Params,
    model: &ModelConfig,
    sched: &NoiseSchedule,
    h2d: &Array,
    mols: &[&Molecule2D],
    xs: &[Vec<f64>],
    t: f64,
) -> Result<Vec<Vec<f64>>, ScoreError> {
    let mut g = Graph::new();
    let mut b = Binder::new(params);
    let h = g.constant(h2d.clone());
    let coords: Vec<Vec3> = xs.iter().flat_map(|x| to_points(x)).collect();
    let times = vec![t; mols.len()];
    let s = topo_to_geom::build(&mut g, &mut b, model, sched, h, mols, &coords, &times)?;
    let flat = g.value(s).data();
    let mut out = Vec::with_capacity(xs.len());
    let mut at = 0;
    for x in xs {
        out.push(flat[at..at + x.len()].to_vec());
        at += x.len();
    }
    Ok(out)
}

/// One decoded topology.
#[derive(Clone, Debug, PartialEq)]
pub struct TopoSample {
    /// Bonds from the decoded bond rows; features use the conditioning atom types.
    pub topo: Molecule2D,
    /// Argmax of each decoded atom row.
    pub atom_types: Vec<u16>,
    /// Bond evidence of each pair in `pair_list` order: the largest bond
    /// channel minus the no-bond channel.
    pub pair_scores: Vec<f64>,
}

/// Reverse-diffuses one topology per conformation.
pub fn sample_topologies(
    geoms: &[Molecule3D],
    params: &Params,
    model: &ModelConfig,
    sched: &NoiseSchedule,
    cfg: &SampleConfig,
    seed: u64,
) -> Result<Vec<TopoSample>, ScoreError> {
    for g in geoms {
        g.validate()?;
    }
    if cfg.batch_size == 0 {
        return Err(ScoreError::Config(
            "sample batch size must be positive".into(),
        ));
    }
    let mut out = Vec::with_capacity(geoms.len());
    for (chunk_idx, chunk) in geoms.chunks(cfg.batch_size).enumerate() {
        let first = chunk_idx * cfg.batch_size;
        let mols: Vec<&Molecule3D> = chunk.iter().collect();
        let h3d = {
            let mut g = Graph::new();
            let mut b = Binder::new(params);
            let h = encoder3d::build(&mut g, &mut b, model, &mols)?;
            g.value(h).clone()
        };
        let sizes: Vec<(usize, usize)> = mols
            .iter()
            .map(|m| {
                let n = m.num_atoms();
                (n * ATOM_ONEHOT, n * n.saturating_sub(1) / 2 * EDGE_CHANNELS)
            })
            .collect();
        let lens: Vec<usize> = sizes.iter().map(|(x, e)| x + e).collect();
        let mut rngs: Vec<ChaCha8Rng> = (0..chunk.len())
            .map(|c| chain_rng(seed, first + c, Stream::Topo))
            .collect();
        let mut failure = None;
        let states = pc_sample_batch(
            |xs: &[Vec<f64>], t| {
                let fallback = || xs.iter().map(|x| vec![0.0; x.len()]).collect();
                if failure.is_some() {
                    return fallback();
                }
                match score_topologies(params, model, sched, &h3d, &mols, &sizes, xs, t) {
                    Ok(s) => s,
                    Err(e) => {
                        failure = Some(e);
                        fallback()
                    }
                }
            },
            sched,
            &lens,
            &cfg.pc,
            &mut rngs,
            |_, _: &mut [f64]| {},
        );
        if let Some(e) = failure {
            return Err(e);
        }
        for ((geom, &(nx, _)), state) in mols.iter().zip(&sizes).zip(states) {
            out.push(decode_topology(geom, &state[..nx], &state[nx..]));
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn score_topologies(
    params: &Params,
    model: &ModelConfig,
    sched: &NoiseSchedule,
    h3d: &Array,
    mols: &[&Molecule3D],
    sizes: &[(usize, usize)],
    xs: &[Vec<f64>],
    t: f64,
) -> Result<Vec<Vec<f64>>, ScoreError> {
    let mut x_t = Vec::new();
    let mut e_t = Vec::new();
    for (x, &(nx, _)) in xs.iter().zip(sizes) {
        x_t.extend_from_slice(&x[..nx]);
        e_t.extend_from_slice(&x[nx..]);
    }
    let mut g = Graph::new();
    let mut b = Binder::new(params);
    let h = g.constant(h3d.clone());
    let times = vec![t; mols.len()];
    let s = geom_to_topo::build(&mut g, &mut b, model, sched, h, &x_t, &e_t, mols, &times)?;
    let node = g.value(s.node).data();
    let edge = s.edge.map(|e| g.value(e).data());
    let (mut at_x, mut at_e) = (0, 0);
    let mut out = Vec::with_capacity(xs.len());
    for &(nx, ne) in sizes {
        let mut v = node[at_x..at_x + nx].to_vec();
        match edge {
            Some(edge) => v.extend_from_slice(&edge[at_e..at_e + ne]),
            None => v.extend(std::iter::repeat_n(0.0, ne)),
        }
        at_x += nx;
        at_e += ne;
        out.push(v);
    }
    Ok(out)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Decodes a sampled atom matrix and bond rows against the conditioning geometry.
pub fn decode_topology(geom: &Molecule3D, x: &[f64], e: &[f64]) -> TopoSample {
    let atom_types = x
        .chunks_exact(ATOM_ONEHOT)
        .map(|row| argmax(row) as u16)
        .collect();
    let mut bonds = Vec::new();
    let mut pair_scores = Vec::new();
    for ((i, j), row) in pair_list(geom.num_atoms())
        .into_iter()
        .zip(e.chunks_exact(EDGE_CHANNELS))
    {
        let best_bond = row
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != NO_BOND)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        pair_scores.push(best_bond - row[NO_BOND]);
        let c = argmax(row);
        if c != NO_BOND {
            bonds.push(Bond::new(i, j, (c - 1) as u8));
        }
    }
    TopoSample {
        topo: derive_topology(&geom.atom_types, bonds),
        atom_types,
        pair_scores,
    }
}

/// Bond labels of every pair in `pair_list` order.
pub fn bond_labels(topo: &Molecule2D) -> Vec<bool> {
    let n = topo.num_atoms();
    let mut bonded = vec![false; n * n];
    for b in &topo.bonds {
        bonded[b.i * n + b.j] = true;
        bonded[b.j * n + b.i] = true;
    }
    pair_list(n)
        .into_iter()
        .map(|(i, j)| bonded[i * n + j])
        .collect()
}
