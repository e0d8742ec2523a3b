//! Line-delimited molecule records.
//!
//! One molecule per line, as space-separated `key=value` fields in this order:
//!
//! ```text
//! n=<atoms> atoms=<a0>;<a1>;... bonds=<i>-<j>:<type>,<stereo>,<conj>;... types=<t0>,<t1>,... coords=<x>,<y>,<z>;...
//! ```
//!
//! Each atom entry lists the nine atom feature columns separated by commas,
//! with the formal charge written as a signed value. `bonds=` may be empty.
//! Blank lines and lines starting with `#` are skipped by [`parse_corpus`].

use std::fmt::Write as _;

use super::{
    AtomFeatures, Bond, MolError, Molecule2D, Molecule3D, MoleculePair, CHARGE_OFFSET,
    FORMAL_CHARGE,
};

fn syntax(message: impl Into<String>) -> MolError {
    MolError::Syntax {
        line: 1,
        message: message.into(),
    }
}

fn parse_int(s: &str, what: &str) -> Result<i64, MolError> {
    s.trim()
        .parse::<i64>()
        .map_err(|_| syntax(format!("bad {what} {s:?}")))
}

fn parse_atom(entry: &str, atom: usize) -> Result<AtomFeatures, MolError> {
    let values: Vec<&str> = entry.split(',').collect();
    if values.len() != 9 {
        return Err(syntax(format!(
            "atom {atom} has {} feature columns, expected 9",
            values.len()
        )));
    }
    let mut out = [0u16; 9];
    for (c, v) in values.iter().enumerate() {
        let raw = parse_int(v, "atom feature")?;
        let idx = if c == FORMAL_CHARGE {
            raw + CHARGE_OFFSET as i64
        } else {
            raw
        };
        let (field, bound) = super::ATOM_COLUMNS[c];
        if idx < 0 || idx >= bound as i64 {
            return Err(MolError::AtomFeature {
                atom,
                field,
                value: raw,
                bound,
            });
        }
        out[c] = idx as u16;
    }
    Ok(AtomFeatures(out))
}

fn parse_bond(entry: &str, bond: usize) -> Result<Bond, MolError> {
    let (ends, feats) = entry
        .split_once(':')
        .ok_or_else(|| syntax(format!("bond {bond} lacks ':'")))?;
    let (i, j) = ends
        .split_once('-')
        .ok_or_else(|| syntax(format!("bond {bond} lacks '-'")))?;
    let i = parse_int(i, "bond endpoint")?;
    let j = parse_int(j, "bond endpoint")?;
    if i < 0 || j < 0 {
        return Err(syntax(format!("bond {bond} has a negative endpoint")));
    }
    let values: Vec<&str> = feats.split(',').collect();
    if values.len() != 3 {
        return Err(syntax(format!("bond {bond} needs 3 feature columns")));
    }
    let mut features = [0u8; 3];
    for (c, v) in values.iter().enumerate() {
        let raw = parse_int(v, "bond feature")?;
        let (field, bound) = super::BOND_COLUMNS[c];
        if raw < 0 || raw >= bound as i64 {
            return Err(MolError::BondFeature {
                bond,
                field,
                value: raw,
                bound,
            });
        }
        features[c] = raw as u8;
    }
    Ok(Bond {
        i: i as usize,
        j: j as usize,
        features,
    })
}

fn entries(value: &str) -> impl Iterator<Item = &str> {
    value.split(';').filter(|s| !s.is_empty())
}

/// Parses and validates one record.
pub fn parse_molecule(record: &str) -> Result<MoleculePair, MolError> {
    let mut fields = [None::<&str>; 5];
    const KEYS: [&str; 5] = ["n", "atoms", "bonds", "types", "coords"];
    for token in record.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| syntax(format!("field {token:?} lacks '='")))?;
        let slot = KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| syntax(format!("unknown field {key:?}")))?;
        if fields[slot].replace(value).is_some() {
            return Err(syntax(format!("field {key:?} repeated")));
        }
    }
    let get = |k: usize| fields[k].ok_or_else(|| syntax(format!("missing field {:?}", KEYS[k])));

    let n = parse_int(get(0)?, "atom count")?;
    let atoms = entries(get(1)?)
        .enumerate()
        .map(|(a, e)| parse_atom(e, a))
        .collect::<Result<Vec<_>, _>>()?;
    let bonds = entries(get(2)?)
        .enumerate()
        .map(|(b, e)| parse_bond(e, b))
        .collect::<Result<Vec<_>, _>>()?;
    let atom_types = get(3)?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|t| {
            let v = parse_int(t, "atom type")?;
            u16::try_from(v).map_err(|_| syntax(format!("bad atom type {v}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let coords = entries(get(4)?)
        .map(|e| {
            let xyz: Vec<f64> = e
                .split(',')
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| syntax(format!("bad coordinate {v:?}")))
                })
                .collect::<Result<_, _>>()?;
            <[f64; 3]>::try_from(xyz).map_err(|_| syntax(format!("coordinate {e:?} is not 3D")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    if n < 0 || n as usize != atoms.len() {
        return Err(syntax(format!("n={n} but {} atoms listed", atoms.len())));
    }
    let topo = Molecule2D { atoms, bonds };
    let geom = Molecule3D { atom_types, coords };
    MoleculePair::new(topo, geom)
}

/// Writes one record without a trailing newline.
pub fn serialize_molecule(pair: &MoleculePair) -> String {
    let mut s = String::new();
    let _ = write!(s, "n={} atoms=", pair.topo.atoms.len());
    for (a, atom) in pair.topo.atoms.iter().enumerate() {
        if a > 0 {
            s.push(';');
        }
        for (c, &v) in atom.0.iter().enumerate() {
            if c > 0 {
                s.push(',');
            }
            if c == FORMAL_CHARGE {
                let _ = write!(s, "{}", v as i32 - CHARGE_OFFSET);
            } else {
                let _ = write!(s, "{v}");
            }
        }
    }
    s.push_str(" bonds=");
    for (b, bond) in pair.topo.bonds.iter().enumerate() {
        if b > 0 {
            s.push(';');
        }
        let [t, st, cj] = bond.features;
        let _ = write!(s, "{}-{}:{t},{st},{cj}", bond.i, bond.j);
    }
    s.push_str(" types=");
    for (a, t) in pair.geom.atom_types.iter().enumerate() {
        if a > 0 {
            s.push(',');
        }
        let _ = write!(s, "{t}");
    }
    s.push_str(" coords=");
    for (a, [x, y, z]) in pair.geom.coords.iter().enumerate() {
        if a > 0 {
            s.push(';');
        }
        // `{}` on f64 prints the shortest representation that parses back exactly
        let _ = write!(s, "{x},{y},{z}");
    }
    s
}

/// Parses a whole corpus; errors carry the 1-based line number.
pub fn parse_corpus(text: &str) -> Result<Vec<MoleculePair>, MolError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let pair = parse_molecule(trimmed).map_err(|e| match e {
            MolError::Syntax { message, .. } => MolError::Syntax {
                line: line_no,
                message,
            },
            other => MolError::AtLine {
                line: line_no,
                source: Box::new(other),
            },
        })?;
        out.push(pair);
    }
    Ok(out)
}

pub fn serialize_corpus(pairs: &[MoleculePair]) -> String {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&serialize_molecule(p));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moldata::{derive_topology, BOND_SINGLE};

    fn water() -> MoleculePair {
        let topo = derive_topology(
            &[8, 1, 1],
            vec![Bond::new(0, 1, BOND_SINGLE), Bond::new(0, 2, BOND_SINGLE)],
        );
        let geom = Molecule3D {
            atom_types: vec![8, 1, 1],
            coords: vec![
                [0.0, 0.0, 0.0],
                [0.9572, 0.0, 0.0],
                [-0.2399872, 0.92662721, -0.0],
            ],
        };
        MoleculePair::new(topo, geom).unwrap()
    }

    #[test]
    fn water_roundtrip() {
        let p = water();
        let text = serialize_molecule(&p);
        let back = parse_molecule(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.num_atoms(), 3);
        assert_eq!(serialize_molecule(&back), text);
    }

    #[test]
    fn formal_charge_below_range() {
        let text = serialize_molecule(&water()).replacen("8,0,2,0,", "8,0,2,-6,", 1);
        assert_eq!(
            parse_molecule(&text),
            Err(MolError::AtomFeature {
                atom: 0,
                field: "formal_charge",
                value: -6,
                bound: 11
            })
        );
    }

    #[test]
    fn atom_type_119_rejected() {
        let text = serialize_molecule(&water()).replacen("atoms=8,", "atoms=119,", 1);
        assert!(matches!(
            parse_molecule(&text),
            Err(MolError::AtomFeature {
                field: "atom_type",
                value: 119,
                ..
            })
        ));
    }

    #[test]
    fn bond_endpoint_out_of_range() {
        let text = serialize_molecule(&water()).replacen("0-2:", "0-7:", 1);
        assert!(matches!(
            parse_molecule(&text),
            Err(MolError::BondEndpoint {
                index: 7,
                atoms: 3,
                ..
            })
        ));
    }

    #[test]
    fn coordinate_count_mismatch() {
        let text = serialize_molecule(&water());
        let cut = text.rfind(';').unwrap();
        assert!(matches!(
            parse_molecule(&text[..cut]),
            Err(MolError::AtomCount { .. })
        ));
    }

    #[test]
    fn corpus_errors_carry_line_numbers() {
        let good = serialize_molecule(&water());
        let bad = good.replacen("0-2:", "0-7:", 1);
        let text = format!("# header\n{good}\n\n{bad}\n");
        match parse_corpus(&text) {
            Err(MolError::AtLine { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let text = format!("{good}\nn=oops\n");
        assert!(matches!(
            parse_corpus(&text),
            Err(MolError::Syntax { line: 2, .. })
        ));
    }

    #[test]
    fn empty_bond_list() {
        let p = MoleculePair::new(
            derive_topology(&[6], vec![]),
            Molecule3D {
                atom_types: vec![6],
                coords: vec![[1.0, 2.0, 3.0]],
            },
        )
        .unwrap();
        let text = serialize_molecule(&p);
        assert!(text.contains("bonds= "));
        assert_eq!(parse_molecule(&text).unwrap(), p);
    }
}
