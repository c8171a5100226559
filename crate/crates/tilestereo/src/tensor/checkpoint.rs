//! Checkpoint serialization.
//!
//! Layout (all integers little-endian, values 32-bit floats):
//!
//! ```text
//! magic   8 bytes  "TILESTCK"
//! version u32      currently 1
//! count   u32      number of parameter records
//! record: name_len u32, name bytes (UTF-8),
//!         extents 4 x u32 (batch, channels, height, width),
//!         data    extent-product x f32
//! ```
//!
//! Records appear in parameter insertion order. Loading restores values only
//! (optimizer moments restart at zero) and demands an exact match between
//! file records and the model's parameters, names and extents both.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::store::ParameterStore;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TILESTCK";
const VERSION: u32 = 1;

pub fn save<S: Scalar>(store: &ParameterStore<S>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        for e in p.value.shape() {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.as_f32().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads every record of a checkpoint without needing a model.
pub fn read_raw(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let mut shape = [0usize; 4];
        for e in &mut shape {
            *e = read_u32(&mut r)? as usize;
        }
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)?;
        let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Restores parameter values into an already-constructed store.
pub fn load_into<S: Scalar>(store: &mut ParameterStore<S>, path: &Path) -> Result<()> {
    let records = read_raw(path)?;
    let mut seen = HashSet::new();
    for (name, value) in records {
        store.set_value(&name, value.cast::<S>())?;
        seen.insert(name);
    }
    let missing: Vec<_> = store.iter().map(|p| p.name.clone()).filter(|n| !seen.contains(n)).collect();
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!("checkpoint lacks parameters: {}", missing.join(", "))));
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
