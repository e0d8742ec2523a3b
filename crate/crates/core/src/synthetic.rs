//! Toy molecule generator.
//!
//! Produces zigzag chains, branched zigzag chains and rings with radial
//! substituents, 3 to 12 heavy atoms of C, N and O. Geometry is a fixed
//! function of the topology: 1.5 Å bonds, 120° chain angles, regular-polygon
//! rings, all in one plane. A seeded jitter of at most 0.05 Å per atom is
//! added and the result is centered.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom3d::{center_coordinates, Vec3};
use crate::moldata::{derive_topology, Bond, Molecule3D, MoleculePair, BOND_AROMATIC, BOND_SINGLE};

pub const BOND_LENGTH: f64 = 1.5;
pub const MAX_JITTER: f64 = 0.05;
pub const MIN_ATOMS: usize = 3;
pub const MAX_ATOMS: usize = 12;

const CARBON: u16 = 6;
const NITROGEN: u16 = 7;
const OXYGEN: u16 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Chain,
    Branched,
    Ring,
}

/// Zigzag positions with 120° angles in the xy plane.
fn zigzag(n: usize) -> Vec<Vec3> {
    let dx = BOND_LENGTH * (PI / 6.0).cos();
    let dy = BOND_LENGTH * (PI / 6.0).sin();
    (0..n)
        .map(|k| [k as f64 * dx, if k % 2 == 1 { dy } else { 0.0 }, 0.0])
        .collect()
}

fn unit(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn pick_type<R: Rng + ?Sized>(rng: &mut R, degree: usize) -> u16 {
    let choices: &[u16] = match degree {
        0..=1 => &[CARBON, CARBON, NITROGEN, OXYGEN],
        2 => &[CARBON, CARBON, CARBON, NITROGEN, OXYGEN],
        _ => &[CARBON, CARBON, NITROGEN],
    };
    choices[rng.random_range(0..choices.len())]
}

fn assemble<R: Rng + ?Sized>(
    rng: &mut R,
    coords: Vec<Vec3>,
    bonds: Vec<Bond>,
    aromatic_ring: bool,
) -> MoleculePair {
    let n = coords.len();
    let mut degree = vec![0usize; n];
    for b in &bonds {
        degree[b.i] += 1;
        degree[b.j] += 1;
    }
    let types: Vec<u16> = (0..n)
        .map(|a| {
            if aromatic_ring
                && bonds
                    .iter()
                    .any(|b| (b.i == a || b.j == a) && b.bond_type() == BOND_AROMATIC)
            {
                // aromatic rings keep to C and N
                if rng.random_bool(0.8) {
                    CARBON
                } else {
                    NITROGEN
                }
            } else {
                pick_type(rng, degree[a])
            }
        })
        .collect();
    let jittered: Vec<Vec3> = coords
        .iter()
        .map(|p| {
            let dir = unit(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            let r = rng.random_range(0.0..MAX_JITTER);
            std::array::from_fn(|k| p[k] + r * dir[k])
        })
        .collect();
    let geom = Molecule3D {
        atom_types: types.clone(),
        coords: center_coordinates(&jittered),
    };
    MoleculePair::new(derive_topology(&types, bonds), geom)
        .expect("generator emits valid molecules")
}

fn chain<R: Rng + ?Sized>(rng: &mut R) -> MoleculePair {
    let n = rng.random_range(MIN_ATOMS..=MAX_ATOMS);
    let bonds = (0..n - 1)
        .map(|k| Bond::new(k, k + 1, BOND_SINGLE))
        .collect();
    assemble(rng, zigzag(n), bonds, false)
}

fn branched<R: Rng + ?Sized>(rng: &mut R) -> MoleculePair {
    let backbone = rng.random_range(3..=MAX_ATOMS - 1);
    let interior = backbone - 2;
    let max_branches = interior.min(MAX_ATOMS - backbone);
    let count = rng.random_range(1..=max_branches);
    let mut sites = sample(rng, interior, count).into_vec();
    sites.sort_unstable();
    let mut coords = zigzag(backbone);
    let mut bonds: Vec<Bond> = (0..backbone - 1)
        .map(|k| Bond::new(k, k + 1, BOND_SINGLE))
        .collect();
    for s in sites {
        let k = s + 1;
        let prev = coords[k - 1];
        let next = coords[k + 1];
        let here = coords[k];
        let out = unit(std::array::from_fn(|c| 2.0 * here[c] - prev[c] - next[c]));
        coords.push(std::array::from_fn(|c| here[c] + BOND_LENGTH * out[c]));
        bonds.push(Bond::new(k, coords.len() - 1, BOND_SINGLE));
    }
    assemble(rng, coords, bonds, false)
}

fn ring<R: Rng + ?Sized>(rng: &mut R) -> MoleculePair {
    let size = rng.random_range(3..=8usize);
    let radius = BOND_LENGTH / (2.0 * (PI / size as f64).sin());
    let subs = rng.random_range(0..=size.min(MAX_ATOMS - size));
    let aromatic = size == 6 && rng.random_bool(0.5);
    let mut coords: Vec<Vec3> = (0..size)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / size as f64;
            [radius * a.cos(), radius * a.sin(), 0.0]
        })
        .collect();
    let ring_type = if aromatic { BOND_AROMATIC } else { BOND_SINGLE };
    let mut bonds: Vec<Bond> = (0..size)
        .map(|k| Bond::new(k, (k + 1) % size, ring_type))
        .collect();
    let mut sites = sample(rng, size, subs).into_vec();
    sites.sort_unstable();
    for k in sites {
        let a = 2.0 * PI * k as f64 / size as f64;
        let r = radius + BOND_LENGTH;
        coords.push([r * a.cos(), r * a.sin(), 0.0]);
        bonds.push(Bond::new(k, coords.len() - 1, BOND_SINGLE));
    }
    assemble(rng, coords, bonds, aromatic)
}

/// One molecule of the given shape.
pub fn generate_shape<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> MoleculePair {
    match shape {
        Shape::Chain => chain(rng),
        Shape::Branched => branched(rng),
        Shape::Ring => ring(rng),
    }
}

/// One molecule with a uniformly chosen shape.
pub fn generate_molecule<R: Rng + ?Sized>(rng: &mut R) -> MoleculePair {
    let shape = [Shape::Chain, Shape::Branched, Shape::Ring][rng.random_range(0..3)];
    generate_shape(shape, rng)
}

/// `n` molecules from one seeded stream.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<MoleculePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| generate_molecule(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom3d::distance;

    #[test]
    fn corpus_is_valid_and_seeded() {
        let a = generate_corpus(200, 5);
        assert_eq!(a, generate_corpus(200, 5));
        assert_ne!(a, generate_corpus(200, 6));
        for p in &a {
            p.validate().unwrap();
            assert!((MIN_ATOMS..=MAX_ATOMS).contains(&p.num_atoms()));
        }
    }

    #[test]
    fn bonds_have_fixed_length() {
        for p in generate_corpus(100, 1) {
            for b in &p.topo.bonds {
                let d = distance(p.geom.coords[b.i], p.geom.coords[b.j]);
                assert!((d - BOND_LENGTH).abs() <= 2.0 * MAX_JITTER + 1e-12, "{d}");
            }
        }
    }

    #[test]
    fn nonbonded_atoms_are_apart() {
        for p in generate_corpus(200, 2) {
            let bonded: Vec<(usize, usize)> = p
                .topo
                .bonds
                .iter()
                .map(|b| (b.i.min(b.j), b.i.max(b.j)))
                .collect();
            let n = p.num_atoms();
            for i in 0..n {
                for j in i + 1..n {
                    if !bonded.contains(&(i, j)) {
                        let d = distance(p.geom.coords[i], p.geom.coords[j]);
                        assert!(d > 1.6, "atoms {i},{j} at {d}");
                    }
                }
            }
        }
    }

    #[test]
    fn all_shapes_appear() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for shape in [Shape::Chain, Shape::Branched, Shape::Ring] {
            for _ in 0..30 {
                generate_shape(shape, &mut rng).validate().unwrap();
            }
        }
    }
}
