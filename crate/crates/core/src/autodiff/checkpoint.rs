//! Binary parameter checkpoints.
//!
//! Layout: the magic bytes `MSDE1`, then one record per array until end of
//! file. A record is the name length (u64), the UTF-8 name, the rank (u64),
//! each dimension (u64), then the values as f64. All integers and floats are
//! little-endian. Records are written in name order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Array, Params};

pub const MAGIC: &[u8; 5] = b"MSDE1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("missing MSDE1 magic header")]
    BadMagic,
    #[error("truncated record {0:?}")]
    Truncated(String),
    #[error("record name is not UTF-8")]
    BadName,
    #[error("record {name:?} has invalid shape {shape:?}")]
    BadShape { name: String, shape: Vec<u64> },
    #[error("duplicate record {0:?}")]
    Duplicate(String),
}

pub fn write_params<W: Write>(mut w: W, params: &Params) -> io::Result<()> {
    w.write_all(MAGIC)?;
    for (name, arr) in params {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(arr.rank() as u64).to_le_bytes())?;
        for &d in arr.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in arr.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u64<R: Read>(r: &mut R, ctx: &str) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| CheckpointError::Truncated(ctx.to_string()))?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_params<R: Read>(mut r: R) -> Result<Params, CheckpointError> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut params = Params::new();
    loop {
        let mut first = [0u8; 8];
        // a clean end of file between records terminates the stream
        match r.read(&mut first[..1])? {
            0 => break,
            _ => r
                .read_exact(&mut first[1..])
                .map_err(|_| CheckpointError::Truncated("<name length>".into()))?,
        }
        let name_len = u64::from_le_bytes(first) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| CheckpointError::Truncated("<name>".into()))?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::BadName)?;
        let rank = read_u64(&mut r, &name)?;
        let shape: Vec<u64> = (0..rank)
            .map(|_| read_u64(&mut r, &name))
            .collect::<Result<_, _>>()?;
        let dims: Vec<usize> = shape.iter().map(|&d| d as usize).collect();
        if dims.is_empty() || dims.contains(&0) {
            return Err(CheckpointError::BadShape { name, shape });
        }
        let len: usize = dims.iter().product();
        let mut raw = vec![0u8; len * 8];
        r.read_exact(&mut raw)
            .map_err(|_| CheckpointError::Truncated(name.clone()))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let arr = Array::new(dims, data).map_err(|_| CheckpointError::BadShape {
            name: name.clone(),
            shape: shape.clone(),
        })?;
        if params.insert(name.clone(), arr).is_some() {
            return Err(CheckpointError::Duplicate(name));
        }
    }
    Ok(params)
}

pub fn save(path: impl AsRef<Path>, params: &Params) -> io::Result<()> {
    write_params(BufWriter::new(File::create(path)?), params)
}

pub fn load(path: impl AsRef<Path>) -> Result<Params, CheckpointError> {
    read_params(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_bit_exact() {
        let params = Params::from([(
            "ab".to_string(),
            Array::new(vec![1, 2], vec![1.0, -0.5]).unwrap(),
        )]);
        let mut buf = Vec::new();
        write_params(&mut buf, &params).unwrap();
        let mut expected = b"MSDE1".to_vec();
        expected.extend(2u64.to_le_bytes());
        expected.extend(b"ab");
        expected.extend(2u64.to_le_bytes());
        expected.extend(1u64.to_le_bytes());
        expected.extend(2u64.to_le_bytes());
        expected.extend(1.0f64.to_le_bytes());
        expected.extend((-0.5f64).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            read_params(&b"MSDE2"[..]),
            Err(CheckpointError::BadMagic)
        ));
        let params = Params::from([("w".to_string(), Array::zeros(&[3, 3]))]);
        let mut buf = Vec::new();
        write_params(&mut buf, &params).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            read_params(&buf[..]),
            Err(CheckpointError::Truncated(_))
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(
            entries in prop::collection::btree_map(
                "[a-z.0-9]{1,12}",
                (1usize..4, 1usize..5).prop_flat_map(|(r, c)| {
                    prop::collection::vec(any::<f64>(), r * c).prop_map(move |d| (r, c, d))
                }),
                0..6,
            )
        ) {
            let params: Params = entries
                .into_iter()
                .map(|(k, (r, c, d))| (k, Array::new(vec![r, c], d).unwrap()))
                .collect();
            let mut buf = Vec::new();
            write_params(&mut buf, &params).unwrap();
            let back = read_params(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), params.len());
            for (k, a) in &params {
                let b = &back[k];
                prop_assert_eq!(a.shape(), b.shape());
                for (x, y) in a.data().iter().zip(b.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
