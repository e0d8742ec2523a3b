//! Molecule data model shared by the topology and geometry sides.
//!
//! Atom and bond features are stored as categorical indices. The mask token
//! of a column is the index one past the column's last valid class, so
//! embedding tables carry `cardinality + 1` rows.

mod dense;
mod format;
mod mask;

pub use dense::{to_dense_edge_tensor, EDGE_CHANNELS, NO_BOND};
pub use format::{parse_corpus, parse_molecule, serialize_corpus, serialize_molecule};
pub use mask::{apply_mask_2d, apply_mask_3d, mask_count, MaskSpec};

use thiserror::Error;

/// Atom feature columns and their class counts.
pub const ATOM_COLUMNS: [(&str, usize); 9] = [
    ("atom_type", 119),
    ("chirality", 4),
    ("degree", 11),
    ("formal_charge", 11),
    ("num_hs", 9),
    ("radical", 5),
    ("hybridization", 5),
    ("aromatic", 2),
    ("in_ring", 2),
];

/// Bond feature columns and their class counts.
pub const BOND_COLUMNS: [(&str, usize); 3] = [("bond_type", 4), ("stereo", 6), ("conjugated", 2)];

pub const ATOM_TYPE: usize = 0;
pub const DEGREE: usize = 2;
pub const FORMAL_CHARGE: usize = 3;
pub const NUM_HS: usize = 4;
pub const HYBRIDIZATION: usize = 6;
pub const AROMATIC: usize = 7;
pub const IN_RING: usize = 8;

/// Index offset of the formal charge column (charge -5 is class 0).
pub const CHARGE_OFFSET: i32 = 5;

/// Number of atom types, and the mask token of the atom-type column.
pub const NUM_ATOM_TYPES: usize = 119;
pub const ATOM_MASK_TOKEN: u16 = NUM_ATOM_TYPES as u16;

pub const BOND_SINGLE: u8 = 0;
pub const BOND_DOUBLE: u8 = 1;
pub const BOND_TRIPLE: u8 = 2;
pub const BOND_AROMATIC: u8 = 3;

pub const HYBRID_SP: u16 = 0;
pub const HYBRID_SP2: u16 = 1;
pub const HYBRID_SP3: u16 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum MolError {
    #[error("atom {atom}: {field} index {value} outside [0, {bound})")]
    AtomFeature {
        atom: usize,
        field: &'static str,
        value: i64,
        bound: usize,
    },
    #[error("bond {bond}: {field} index {value} outside [0, {bound})")]
    BondFeature {
        bond: usize,
        field: &'static str,
        value: i64,
        bound: usize,
    },
    #[error("bond {bond}: endpoint {index} out of range for {atoms} atoms")]
    BondEndpoint {
        bond: usize,
        index: usize,
        atoms: usize,
    },
    #[error("bond {bond}: self-bond on atom {atom}")]
    SelfBond { bond: usize, atom: usize },
    #[error("bond {bond}: duplicate bond between {i} and {j}")]
    DuplicateBond { bond: usize, i: usize, j: usize },
    #[error("atom count mismatch: topology has {topo}, geometry has {geom}")]
    AtomCount { topo: usize, geom: usize },
    #[error("atom {atom}: topology type {topo} disagrees with geometry type {geom}")]
    AtomTypeMismatch { atom: usize, topo: u16, geom: u16 },
    #[error("atom {atom}: non-finite coordinate")]
    NonFinite { atom: usize },
    #[error("molecule has no atoms")]
    Empty,
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<MolError>,
    },
}

/// Categorical atom features, one index per [`ATOM_COLUMNS`] entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AtomFeatures(pub [u16; 9]);

impl AtomFeatures {
    pub fn atom_type(&self) -> u16 {
        self.0[ATOM_TYPE]
    }

    pub fn formal_charge(&self) -> i32 {
        self.0[FORMAL_CHARGE] as i32 - CHARGE_OFFSET
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    /// Indices for [`BOND_COLUMNS`].
    pub features: [u8; 3],
}

impl Bond {
    pub fn new(i: usize, j: usize, bond_type: u8) -> Self {
        let conjugated = u8::from(bond_type == BOND_AROMATIC);
        Self {
            i,
            j,
            features: [bond_type, 0, conjugated],
        }
    }

    pub fn bond_type(&self) -> u8 {
        self.features[0]
    }

    pub fn other(&self, atom: usize) -> usize {
        if self.i == atom {
            self.j
        } else {
            self.i
        }
    }
}

/// Topological graph: atom features plus an undirected bond list.
#[derive(Clone, Debug, PartialEq)]
pub struct Molecule2D {
    pub atoms: Vec<AtomFeatures>,
    pub bonds: Vec<Bond>,
}

/// Point cloud with atom types; coordinates in Å.
#[derive(Clone, Debug, PartialEq)]
pub struct Molecule3D {
    pub atom_types: Vec<u16>,
    pub coords: Vec<[f64; 3]>,
}

/// A topology and a conformation sharing atom ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct MoleculePair {
    pub topo: Molecule2D,
    pub geom: Molecule3D,
}

impl Molecule2D {
    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Checks every feature index against its column range and the bond list invariants.
    pub fn validate(&self) -> Result<(), MolError> {
        if self.atoms.is_empty() {
            return Err(MolError::Empty);
        }
        for (a, atom) in self.atoms.iter().enumerate() {
            for (c, &(field, bound)) in ATOM_COLUMNS.iter().enumerate() {
                let value = atom.0[c] as usize;
                if value >= bound {
                    let value = if c == FORMAL_CHARGE {
                        value as i64 - CHARGE_OFFSET as i64
                    } else {
                        value as i64
                    };
                    return Err(MolError::AtomFeature {
                        atom: a,
                        field,
                        value,
                        bound,
                    });
                }
            }
        }
        let n = self.atoms.len();
        let mut seen = std::collections::HashSet::new();
        for (b, bond) in self.bonds.iter().enumerate() {
            for index in [bond.i, bond.j] {
                if index >= n {
                    return Err(MolError::BondEndpoint {
                        bond: b,
                        index,
                        atoms: n,
                    });
                }
            }
            if bond.i == bond.j {
                return Err(MolError::SelfBond {
                    bond: b,
                    atom: bond.i,
                });
            }
            for (c, &(field, bound)) in BOND_COLUMNS.iter().enumerate() {
                if bond.features[c] as usize >= bound {
                    return Err(MolError::BondFeature {
                        bond: b,
                        field,
                        value: bond.features[c] as i64,
                        bound,
                    });
                }
            }
            if !seen.insert((bond.i.min(bond.j), bond.i.max(bond.j))) {
                return Err(MolError::DuplicateBond {
                    bond: b,
                    i: bond.i,
                    j: bond.j,
                });
            }
        }
        Ok(())
    }

    /// Neighbor lists derived from the bond list.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.i].push(b.j);
            adj[b.j].push(b.i);
        }
        adj
    }

    /// Shortest-path hop counts; `usize::MAX` for disconnected pairs.
    pub fn hop_distances(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let n = self.atoms.len();
        let mut out = vec![vec![usize::MAX; n]; n];
        for (s, row) in out.iter_mut().enumerate() {
            row[s] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if row[v] == usize::MAX {
                        row[v] = row[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
        }
        out
    }
}

impl Molecule3D {
    pub fn num_atoms(&self) -> usize {
        self.atom_types.len()
    }

    pub fn validate(&self) -> Result<(), MolError> {
        if self.atom_types.is_empty() {
            return Err(MolError::Empty);
        }
        if self.atom_types.len() != self.coords.len() {
            return Err(MolError::AtomCount {
                topo: self.atom_types.len(),
                geom: self.coords.len(),
            });
        }
        for (a, &t) in self.atom_types.iter().enumerate() {
            if t as usize >= NUM_ATOM_TYPES {
                return Err(MolError::AtomFeature {
                    atom: a,
                    field: "atom_type",
                    value: t as i64,
                    bound: NUM_ATOM_TYPES,
                });
            }
        }
        if let Some(atom) = self
            .coords
            .iter()
            .position(|c| c.iter().any(|v| !v.is_finite()))
        {
            return Err(MolError::NonFinite { atom });
        }
        Ok(())
    }
}

impl MoleculePair {
    pub fn new(topo: Molecule2D, geom: Molecule3D) -> Result<Self, MolError> {
        let pair = Self { topo, geom };
        pair.validate()?;
        Ok(pair)
    }

    pub fn num_atoms(&self) -> usize {
        self.topo.num_atoms()
    }

    pub fn validate(&self) -> Result<(), MolError> {
        self.topo.validate()?;
        self.geom.validate()?;
        if self.topo.num_atoms() != self.geom.num_atoms() {
            return Err(MolError::AtomCount {
                topo: self.topo.num_atoms(),
                geom: self.geom.num_atoms(),
            });
        }
        for (atom, (a, &g)) in self
            .topo
            .atoms
            .iter()
            .zip(&self.geom.atom_types)
            .enumerate()
        {
            if a.atom_type() != g {
                return Err(MolError::AtomTypeMismatch {
                    atom,
                    topo: a.atom_type(),
                    geom: g,
                });
            }
        }
        Ok(())
    }
}

fn bond_order(bond_type: u8) -> f64 {
    match bond_type {
        BOND_SINGLE => 1.0,
        BOND_DOUBLE => 2.0,
        BOND_TRIPLE => 3.0,
        _ => 1.5,
    }
}

fn default_valence(atomic_num: u16) -> f64 {
    match atomic_num {
        1 => 1.0,
        5 => 3.0,
        6 => 4.0,
        7 => 3.0,
        8 => 2.0,
        9 | 17 | 35 | 53 => 1.0,
        15 => 3.0,
        16 => 2.0,
        _ => 0.0,
    }
}

/// Atoms that lie on at least one cycle, i.e. touch a non-bridge bond.
fn ring_atoms(n: usize, bonds: &[Bond]) -> Vec<bool> {
    // A bond is a bridge iff removing it disconnects its endpoints.
    let mut in_ring = vec![false; n];
    for (skip, b) in bonds.iter().enumerate() {
        let mut adj = vec![Vec::new(); n];
        for (k, o) in bonds.iter().enumerate() {
            if k != skip {
                adj[o.i].push(o.j);
                adj[o.j].push(o.i);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![b.i];
        seen[b.i] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        if seen[b.j] {
            in_ring[b.i] = true;
            in_ring[b.j] = true;
        }
    }
    in_ring
}

/// Builds a topology whose degree, hydrogen count, hybridization, aromaticity
/// and ring columns are derived from the atom types and the bond list.
pub fn derive_topology(atom_types: &[u16], bonds: Vec<Bond>) -> Molecule2D {
    let n = atom_types.len();
    let mut degree = vec![0usize; n];
    let mut valence_used = vec![0.0f64; n];
    let mut max_order = vec![0u8; n];
    let mut aromatic = vec![false; n];
    for b in &bonds {
        for a in [b.i, b.j] {
            degree[a] += 1;
            valence_used[a] += bond_order(b.bond_type());
            if b.bond_type() == BOND_AROMATIC {
                aromatic[a] = true;
            } else {
                max_order[a] = max_order[a].max(b.bond_type());
            }
        }
    }
    let in_ring = ring_atoms(n, &bonds);
    let atoms = (0..n)
        .map(|a| {
            let hs = (default_valence(atom_types[a]) - valence_used[a])
                .floor()
                .clamp(0.0, 8.0);
            let hybrid = if max_order[a] == BOND_TRIPLE {
                HYBRID_SP
            } else if aromatic[a] || max_order[a] == BOND_DOUBLE {
                HYBRID_SP2
            } else {
                HYBRID_SP3
            };
            AtomFeatures([
                atom_types[a],
                0,
                degree[a].min(10) as u16,
                CHARGE_OFFSET as u16,
                hs as u16,
                0,
                hybrid,
                u16::from(aromatic[a]),
                u16::from(in_ring[a]),
            ])
        })
        .collect();
    Molecule2D { atoms, bonds }
}
