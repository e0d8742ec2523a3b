use super::Molecule2D;

/// Channel 0 is "no bond"; channel `1 + t` is bond type `t`.
pub const EDGE_CHANNELS: usize = 5;
pub const NO_BOND: usize = 0;

/// Dense `n x n x EDGE_CHANNELS` one-hot bond tensor, flattened row-major.
///
/// Symmetric in `(i, j)`; the diagonal and absent bonds sit in the no-bond channel.
pub fn to_dense_edge_tensor(mol: &Molecule2D) -> Vec<f64> {
    let n = mol.num_atoms();
    let mut out = vec![0.0; n * n * EDGE_CHANNELS];
    for cell in out.chunks_exact_mut(EDGE_CHANNELS) {
        cell[NO_BOND] = 1.0;
    }
    for b in &mol.bonds {
        let ch = 1 + b.bond_type() as usize;
        for (i, j) in [(b.i, b.j), (b.j, b.i)] {
            let cell = &mut out[(i * n + j) * EDGE_CHANNELS..(i * n + j + 1) * EDGE_CHANNELS];
            cell[NO_BOND] = 0.0;
            cell[ch] = 1.0;
        }
    }
    out
}
