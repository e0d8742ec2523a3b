//! GIN-style encoder over topological graphs.
//!
//! `h_0` is the sum of per-column atom embeddings. Each layer sends
//! `h_j + bond_embedding(e_ij)` along every bond in both directions, sums the
//! messages at the receiver and applies `h <- MLP(h + messages)`, with a shifted softplus
//! between layers.

use super::nn::{embed, indices, mlp2, shifted_softplus};
use super::{batch_offsets, ModelConfig, ScoreError};
use crate::autodiff::{Array, Binder, Graph, Params, Var};
use crate::moldata::{apply_mask_2d, MaskSpec, Molecule2D, ATOM_COLUMNS, BOND_COLUMNS};

/// Builds the encoder for a batch and returns the `[N, D]` atom representations.
pub fn build(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &ModelConfig,
    mols: &[&Molecule2D],
) -> Result<Var, ScoreError> {
    let offsets = batch_offsets(mols.iter().map(|m| m.num_atoms()));
    let total = *offsets.last().unwrap();

    let mut h = None;
    for (c, (col, classes)) in ATOM_COLUMNS.iter().enumerate() {
        let mut idx = Vec::with_capacity(total);
        for m in mols {
            for (a, atom) in m.atoms.iter().enumerate() {
                let v = atom.0[c] as usize;
                if v > *classes {
                    return Err(crate::moldata::MolError::AtomFeature {
                        atom: a,
                        field: col,
                        value: v as i64,
                        bound: classes + 1,
                    }
                    .into());
                }
                idx.push(v);
            }
        }
        let e = embed(g, b, &format!("enc2d.emb.{col}"), idx)?;
        h = Some(match h {
            None => e,
            Some(acc) => g.add(acc, e)?,
        });
    }
    let mut h = h.expect("atom columns");

    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut bond_feats: [Vec<usize>; 3] = Default::default();
    for (m, mol) in mols.iter().enumerate() {
        for bond in &mol.bonds {
            let (i, j) = (offsets[m] + bond.i, offsets[m] + bond.j);
            for (s, d) in [(i, j), (j, i)] {
                src.push(s);
                dst.push(d);
                for c in 0..3 {
                    bond_feats[c].push(bond.features[c] as usize);
                }
            }
        }
    }
    let src = indices(src);
    let dst = indices(dst);

    for layer in 0..cfg.layers {
        let mut update = h;
        if !src.is_empty() {
            let mut emb = None;
            for (c, (col, _)) in BOND_COLUMNS.iter().enumerate() {
                let e = embed(
                    g,
                    b,
                    &format!("enc2d.l{layer}.bond.{col}"),
                    bond_feats[c].clone(),
                )?;
                emb = Some(match emb {
                    None => e,
                    Some(acc) => g.add(acc, e)?,
                });
            }
            let hs = g.gather_rows(h, src.clone())?;
            let msg = g.add(hs, emb.expect("bond columns"))?;
            let agg = g.scatter_add_rows(msg, dst.clone(), total)?;
            update = g.add(h, agg)?;
        }
        h = mlp2(g, b, &format!("enc2d.l{layer}.mlp"), update)?;
        if layer + 1 < cfg.layers {
            h = shifted_softplus(g, h)?;
        }
    }
    Ok(h)
}

/// Atom representations of one molecule after masking.
pub fn encode_2d(
    mol: &Molecule2D,
    params: &Params,
    cfg: &ModelConfig,
    mask: &MaskSpec,
) -> Result<Array, ScoreError> {
    mol.validate()?;
    let (masked, _) = apply_mask_2d(mol, mask);
    let mut g = Graph::new();
    let mut b = Binder::new(params);
    let h = build(&mut g, &mut b, cfg, &[&masked])?;
    Ok(g.value(h).clone())
}
