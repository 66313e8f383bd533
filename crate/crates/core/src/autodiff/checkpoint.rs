//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//! `b"MNAV"`, `u32` version, then until end of file one record per parameter:
//! `u32` name length, UTF-8 name, `u32` rank, `rank × u64` dims, `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::{ParamStore, Tensor};
use super::AutodiffError;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"MNAV";
pub const VERSION: u32 = 1;

fn corrupt(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

pub fn write_checkpoint<S: Scalar, W: Write>(
    store: &ParamStore<S>,
    mut w: W,
) -> Result<(), AutodiffError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for p in store.params() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.values() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads every record into a fresh store, in file order.
pub fn read_checkpoint<S: Scalar, R: Read>(mut r: R) -> Result<ParamStore<S>, AutodiffError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| corrupt("truncated header"))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = read_u32(&mut r)?.ok_or_else(|| corrupt("truncated header"))?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let mut store = ParamStore::new();
    while let Some(name_len) = read_u32(&mut r)? {
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)
            .map_err(|_| corrupt("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("parameter name is not UTF-8"))?;
        let rank = read_u32(&mut r)?.ok_or_else(|| corrupt("truncated rank"))?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|_| corrupt("truncated dims"))?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|_| corrupt(format!("truncated values for {name}")))?;
            values.push(S::lit(f64::from_le_bytes(b)));
        }
        store.add(name, Tensor::new(shape, values)?);
    }
    Ok(store)
}

/// `Ok(None)` at a clean end of file.
fn read_u32<R: Read>(r: &mut R) -> Result<Option<u32>, AutodiffError> {
    let mut b = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        let n = r.read(&mut b[filled..])?;
        if n == 0 {
            return if filled == 0 {
                Ok(None)
            } else {
                Err(corrupt("truncated record"))
            };
        }
        filled += n;
    }
    Ok(Some(u32::from_le_bytes(b)))
}

pub fn save<S: Scalar>(store: &ParamStore<S>, path: &Path) -> Result<(), AutodiffError> {
    write_checkpoint(store, BufWriter::new(File::create(path)?))
}

pub fn load<S: Scalar>(path: &Path) -> Result<ParamStore<S>, AutodiffError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
