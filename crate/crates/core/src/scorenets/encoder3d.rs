//! SchNet-style encoder over point clouds.
//!
//! Atoms start from a type embedding. Each interaction layer convolves with
//! filters generated from the radial expansion of pairwise distances inside
//! the cutoff, damped by a cosine envelope, and adds the result residually.
//! Coordinates enter only through pairwise distances.

use std::f64::consts::PI;

use super::nn::{column, embed, indices, linear, shifted_softplus};
use super::{batch_offsets, ModelConfig, ScoreError};
use crate::autodiff::{Array, Binder, Graph, Params, Var};
use crate::geom3d::{distance, rbf_expand};
use crate::moldata::{apply_mask_3d, MaskSpec, MolError, Molecule3D, NUM_ATOM_TYPES};

/// Ordered neighbor pairs `(i, j)` within `cutoff`, as batch row indices, with distances.
pub(crate) fn neighbor_pairs(
    mols: &[&Molecule3D],
    cutoff: f64,
) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let offsets = batch_offsets(mols.iter().map(|m| m.num_atoms()));
    let (mut dst, mut src, mut dist) = (Vec::new(), Vec::new(), Vec::new());
    for (m, mol) in mols.iter().enumerate() {
        let n = mol.num_atoms();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = distance(mol.coords[i], mol.coords[j]);
                if d < cutoff {
                    dst.push(offsets[m] + i);
                    src.push(offsets[m] + j);
                    dist.push(d);
                }
            }
        }
    }
    (dst, src, dist)
}

/// Builds the encoder for a batch and returns the `[N, D]` atom representations.
pub fn build(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &ModelConfig,
    mols: &[&Molecule3D],
) -> Result<Var, ScoreError> {
    let total: usize = mols.iter().map(|m| m.num_atoms()).sum();
    let mut types = Vec::with_capacity(total);
    for m in mols {
        for (a, &t) in m.atom_types.iter().enumerate() {
            if t as usize > NUM_ATOM_TYPES {
                return Err(MolError::AtomFeature {
                    atom: a,
                    field: "atom_type",
                    value: t as i64,
                    bound: NUM_ATOM_TYPES + 1,
                }
                .into());
            }
            types.push(t as usize);
        }
    }
    let mut h = embed(g, b, "enc3d.emb", types)?;

    let (dst, src, dist) = neighbor_pairs(mols, cfg.cutoff);
    if dst.is_empty() {
        return Ok(h);
    }
    let k = cfg.rbf.centers;
    let mut rbf = Vec::with_capacity(dist.len() * k);
    let mut env = Vec::with_capacity(dist.len());
    for &d in &dist {
        rbf.extend(rbf_expand(d, &cfg.rbf)?);
        env.push(0.5 * ((PI * d / cfg.cutoff).cos() + 1.0));
    }
    let rbf = g.constant(Array::matrix(dist.len(), k, rbf));
    let env = column(g, env);
    let src = indices(src);
    let dst = indices(dst);

    for layer in 0..cfg.layers {
        let p = format!("enc3d.l{layer}");
        let w = linear(g, b, &format!("{p}.filter.0"), rbf)?;
        let w = shifted_softplus(g, w)?;
        let w = linear(g, b, &format!("{p}.filter.1"), w)?;
        let w = g.mul_col(w, env)?;

        let x = linear(g, b, &format!("{p}.in"), h)?;
        let xj = g.gather_rows(x, src.clone())?;
        let msg = g.mul(xj, w)?;
        let agg = g.scatter_add_rows(msg, dst.clone(), total)?;

        let v = linear(g, b, &format!("{p}.out.0"), agg)?;
        let v = shifted_softplus(g, v)?;
        let v = linear(g, b, &format!("{p}.out.1"), v)?;
        h = g.add(h, v)?;
    }
    Ok(h)
}

/// Atom representations of one conformation after masking.
pub fn encode_3d(
    mol: &Molecule3D,
    params: &Params,
    cfg: &ModelConfig,
    mask: &MaskSpec,
) -> Result<Array, ScoreError> {
    mol.validate()?;
    let (masked, _) = apply_mask_3d(mol, mask);
    let mut g = Graph::new();
    let mut b = Binder::new(params);
    let h = build(&mut g, &mut b, cfg, &[&masked])?;
    Ok(g.value(h).clone())
}
