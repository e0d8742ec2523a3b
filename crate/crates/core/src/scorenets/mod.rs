//! Encoders and score networks.
//!
//! * [`encoder2d`]: GIN-style message passing over the topological graph.
//! * [`encoder3d`]: continuous-filter convolutions over pairwise distances.
//! * [`topo_to_geom`]: the SE(3)-equivariant, reflection-antisymmetric
//!   coordinate score conditioned on a topology.
//! * [`geom_to_topo`]: the SE(3)-invariant joint atom/bond score conditioned
//!   on a conformation.
//!
//! Every network is built on an autodiff [`Graph`] from a flat [`Params`]
//! map. Molecules are batched as disjoint unions: atom rows of all molecules
//! are stacked in order.
//!
//! # Parameter names
//!
//! | prefix | contents |
//! |---|---|
//! | `enc2d.emb.<column>` | `[classes + 1, D]` atom feature embeddings |
//! | `enc2d.l<k>.bond.<column>` | `[classes + 1, D]` bond embeddings of layer `k` |
//! | `enc2d.l<k>.mlp.{0,1}` | `D -> D -> D` update MLP |
//! | `enc3d.emb` | `[120, D]` atom type embedding |
//! | `enc3d.l<k>.filter.{0,1}` | `K -> D -> D` radial filter |
//! | `enc3d.l<k>.in` | `D -> D` atomwise map, no bias |
//! | `enc3d.l<k>.out.{0,1}` | `D -> D -> D` update MLP |
//! | `s23.temb.{0,1}` | `2F -> D -> D` time embedding |
//! | `s23.pair.{src,dst,feat}` | pair MLP first layer over `h_i`, `h_j`, bond/hop one-hot |
//! | `s23.pair.1` | `D -> D` |
//! | `s23.proj` | `9 -> D` frame projections |
//! | `s23.rbf` | `K -> D` |
//! | `s23.att<k>.{q,k,v,o}` | edge attention layer `k` |
//! | `s23.head.{0,1}` | `D -> D -> 3` |
//! | `s32.temb.{0,1}` | `2F -> D -> D` |
//! | `s32.xin.{0,1}` | `119 -> D -> D` |
//! | `s32.adj` | `5 -> 1` soft adjacency from the noisy bond tensor |
//! | `s32.gcn<k>` | `D -> D` |
//! | `s32.node.{0,1}` | `(L + 1) D -> D -> 119` |
//! | `s32.att<k>.{q,k}` | `D -> D` pair attention on `H_k` |
//! | `s32.edge.{0,1}` | `(L + 1) + 5 + K -> D -> 5` |
//! | `nce.p2d`, `nce.p3d` | `D -> D` contrastive projection heads |
//!
//! Linear layers store `<name>.w` as `[in, out]` and `<name>.b` as `[1, out]`.
//!
//! # Output scaling
//!
//! Both score networks are preconditioned. With kernel `(a, s)` and a data
//! scale `sd`, write `v = s^2 + a^2 sd^2`. The network sees its noisy input
//! multiplied by `1 / sqrt(v)` and the score is
//!
//! ```text
//! S(x_t) = -x_t / v + a sd / (s sqrt(v)) * F
//! ```
//!
//! where `F` is the raw network output. The first term is the exact score
//! when the data are `N(0, sd^2)`, so `F` only models the residual.

pub mod encoder2d;
pub mod encoder3d;
pub mod geom_to_topo;
pub(crate) mod nn;
pub mod symmetry;
pub mod topo_to_geom;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::{AdError, Array, Params};
use crate::geom3d::{GeomError, RbfSpec};
use crate::moldata::{MolError, ATOM_COLUMNS, BOND_COLUMNS, EDGE_CHANNELS, NUM_ATOM_TYPES};
use crate::sde::{NoiseSchedule, SdeError};

pub use nn::time_features;

/// Width of the atom one-hot matrix diffused by the topology score.
pub const ATOM_ONEHOT: usize = NUM_ATOM_TYPES;
/// Number of 2D-to-3D pair categories: no bond plus four bond types.
pub const PAIR_BOND_CLASSES: usize = EDGE_CHANNELS;
/// Hop-distance classes `1..=6` plus one for farther or disconnected pairs.
pub const PAIR_HOP_CLASSES: usize = 7;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Mol(#[from] MolError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error("coordinates of molecule {molecule} are not centered (mean offset {offset:e})")]
    NotCentered { molecule: usize, offset: f64 },
    #[error("edge tensor is not symmetric (max deviation {0:e})")]
    AsymmetricEdges(f64),
    #[error("{what}: expected {expected}, got {got}")]
    Size {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid model config: {0}")]
    Config(String),
}

/// Which frame axes the coordinate score may use.
///
/// `DropPseudo` discards the pseudo-vector axis `e2`; the resulting network is
/// reflection-equivariant and serves as a negative control for symmetry checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FrameMode {
    #[default]
    Full,
    DropPseudo,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub attn_layers: usize,
    pub time_freqs: usize,
    pub rbf: RbfSpec,
    /// Neighbor cutoff in Å for 3D convolutions and coordinate-score edges.
    pub cutoff: f64,
    pub frame_mode: FrameMode,
    /// Data scale `sd` of centered coordinates, in Å.
    pub geom_data_std: f64,
    /// Data scale `sd` of the one-hot atom and bond entries.
    pub topo_data_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 3,
            attn_layers: 2,
            time_freqs: 16,
            rbf: RbfSpec {
                centers: 32,
                cutoff: 10.0,
                gamma: 10.0,
            },
            cutoff: 10.0,
            frame_mode: FrameMode::Full,
            geom_data_std: 2.0,
            topo_data_std: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.hidden == 0 {
            return Err(ScoreError::Config("model.hidden must be positive".into()));
        }
        if self.layers == 0 {
            return Err(ScoreError::Config("model.layers must be positive".into()));
        }
        if self.time_freqs == 0 {
            return Err(ScoreError::Config(
                "model.time_freqs must be positive".into(),
            ));
        }
        if !(self.cutoff > 0.0) {
            return Err(ScoreError::Config("model.cutoff must be positive".into()));
        }
        if !(self.geom_data_std > 0.0 && self.geom_data_std.is_finite()) {
            return Err(ScoreError::Config(
                "model.geom_data_std must be positive".into(),
            ));
        }
        if !(self.topo_data_std > 0.0 && self.topo_data_std.is_finite()) {
            return Err(ScoreError::Config(
                "model.topo_data_std must be positive".into(),
            ));
        }
        self.rbf.validate()?;
        Ok(())
    }
}

/// Input and output coefficients of a preconditioned score at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Scaling {
    pub input: f64,
    pub skip: f64,
    pub out: f64,
}

pub(crate) fn scaling(sched: &NoiseSchedule, t: f64, data_std: f64) -> Result<Scaling, ScoreError> {
    let k = sched.kernel_at(t)?;
    if k.std == 0.0 {
        return Err(SdeError::ZeroStd.into());
    }
    let v = k.std * k.std + k.mean_coef * k.mean_coef * data_std * data_std;
    Ok(Scaling {
        input: 1.0 / v.sqrt(),
        skip: -1.0 / v,
        out: k.mean_coef * data_std / (k.std * v.sqrt()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    /// `N(0, 1 / fan_in)`.
    Weight,
    Zero,
    /// `N(0, 1)` scaled by the given factor.
    Embedding(u32),
}

fn linear_specs(
    out: &mut Vec<(String, Vec<usize>, Init)>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    bias: bool,
) {
    out.push((format!("{name}.w"), vec![fan_in, fan_out], Init::Weight));
    if bias {
        out.push((format!("{name}.b"), vec![1, fan_out], Init::Zero));
    }
}

fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.hidden;
    let k = cfg.rbf.centers;
    let f2 = 2 * cfg.time_freqs;
    let l = cfg.layers;
    let mut s = Vec::new();

    for (col, classes) in ATOM_COLUMNS {
        s.push((
            format!("enc2d.emb.{col}"),
            vec![classes + 1, d],
            Init::Embedding(ATOM_COLUMNS.len() as u32),
        ));
    }
    for layer in 0..l {
        for (col, classes) in BOND_COLUMNS {
            s.push((
                format!("enc2d.l{layer}.bond.{col}"),
                vec![classes + 1, d],
                Init::Embedding(BOND_COLUMNS.len() as u32),
            ));
        }
        linear_specs(&mut s, &format!("enc2d.l{layer}.mlp.0"), d, d, true);
        linear_specs(&mut s, &format!("enc2d.l{layer}.mlp.1"), d, d, true);
    }

    s.push((
        "enc3d.emb".into(),
        vec![NUM_ATOM_TYPES + 1, d],
        Init::Embedding(1),
    ));
    for layer in 0..l {
        linear_specs(&mut s, &format!("enc3d.l{layer}.filter.0"), k, d, true);
        linear_specs(&mut s, &format!("enc3d.l{layer}.filter.1"), d, d, true);
        linear_specs(&mut s, &format!("enc3d.l{layer}.in"), d, d, false);
        linear_specs(&mut s, &format!("enc3d.l{layer}.out.0"), d, d, true);
        linear_specs(&mut s, &format!("enc3d.l{layer}.out.1"), d, d, true);
    }

    linear_specs(&mut s, "s23.temb.0", f2, d, true);
    linear_specs(&mut s, "s23.temb.1", d, d, true);
    linear_specs(&mut s, "s23.pair.src", d, d, true);
    linear_specs(&mut s, "s23.pair.dst", d, d, false);
    linear_specs(
        &mut s,
        "s23.pair.feat",
        PAIR_BOND_CLASSES + PAIR_HOP_CLASSES,
        d,
        false,
    );
    linear_specs(&mut s, "s23.pair.1", d, d, true);
    linear_specs(&mut s, "s23.proj", 9, d, true);
    linear_specs(&mut s, "s23.rbf", k, d, true);
    for a in 0..cfg.attn_layers {
        for p in ["q", "k", "v"] {
            linear_specs(&mut s, &format!("s23.att{a}.{p}"), d, d, false);
        }
        linear_specs(&mut s, &format!("s23.att{a}.o"), d, d, true);
    }
    linear_specs(&mut s, "s23.head.0", d, d, true);
    linear_specs(&mut s, "s23.head.1", d, 3, true);

    linear_specs(&mut s, "s32.temb.0", f2, d, true);
    linear_specs(&mut s, "s32.temb.1", d, d, true);
    linear_specs(&mut s, "s32.xin.0", ATOM_ONEHOT, d, true);
    linear_specs(&mut s, "s32.xin.1", d, d, true);
    linear_specs(&mut s, "s32.adj", EDGE_CHANNELS, 1, true);
    for layer in 0..l {
        linear_specs(&mut s, &format!("s32.gcn{layer}"), d, d, true);
    }
    linear_specs(&mut s, "s32.node.0", (l + 1) * d, d, true);
    linear_specs(&mut s, "s32.node.1", d, ATOM_ONEHOT, true);
    for layer in 0..=l {
        linear_specs(&mut s, &format!("s32.att{layer}.q"), d, d, false);
        linear_specs(&mut s, &format!("s32.att{layer}.k"), d, d, false);
    }
    linear_specs(&mut s, "s32.edge.0", (l + 1) + EDGE_CHANNELS + k, d, true);
    linear_specs(&mut s, "s32.edge.1", d, EDGE_CHANNELS, true);

    linear_specs(&mut s, "nce.p2d", d, d, true);
    linear_specs(&mut s, "nce.p3d", d, d, true);
    s
}

/// Names and shapes of every parameter, in name order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut v: Vec<_> = param_specs(cfg)
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    v.sort();
    v
}

/// Seeded random initialization.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::new();
    for (name, shape, init) in param_specs(cfg) {
        let len: usize = shape.iter().product();
        let std = match init {
            Init::Zero => 0.0,
            Init::Weight => 1.0 / (shape[0] as f64).sqrt(),
            Init::Embedding(parts) => 1.0 / (parts as f64).sqrt(),
        };
        let data = if std == 0.0 {
            vec![0.0; len]
        } else {
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..len).map(|_| dist.sample(&mut rng)).collect()
        };
        params.insert(name, Array::new(shape, data).expect("spec shape"));
    }
    params
}

/// Checks that `params` holds exactly the arrays `cfg` expects.
pub fn check_params(cfg: &ModelConfig, params: &Params) -> Result<(), ScoreError> {
    for (name, shape) in param_shapes(cfg) {
        let arr = params
            .get(&name)
            .ok_or_else(|| ScoreError::Config(format!("parameter {name} missing")))?;
        if arr.shape() != shape.as_slice() {
            return Err(ScoreError::Config(format!(
                "parameter {name} has shape {:?}, expected {shape:?}",
                arr.shape()
            )));
        }
    }
    Ok(())
}

/// Atom offsets of a disjoint-union batch: molecule `m` owns rows
/// `offsets[m]..offsets[m + 1]`.
pub fn batch_offsets(sizes: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut offsets = vec![0];
    for n in sizes {
        offsets.push(offsets.last().unwrap() + n);
    }
    offsets
}
