//! Named-array container: magic, metadata string, then per array a name,
//! a (rows, cols) header and a little-endian f64 payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::ParamSet;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"WWTPNN01";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form metadata, JSON by convention.
    pub metadata: String,
    pub params: ParamSet,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(ckpt.metadata.len() as u32).to_le_bytes())?;
    w.write_all(ckpt.metadata.as_bytes())?;
    w.write_all(&(ckpt.params.len() as u32).to_le_bytes())?;
    for (name, v) in ckpt.params.iter() {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(v.nrows() as u32).to_le_bytes())?;
        w.write_all(&(v.ncols() as u32).to_le_bytes())?;
        for x in v.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string(r: &mut impl Read, len: usize) -> Result<String> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: unknown magic {:?}",
            path.display(),
            String::from_utf8_lossy(&magic)
        )));
    }
    let meta_len = read_u32(&mut r)? as usize;
    let metadata = read_string(&mut r, meta_len)?;
    let count = read_u32(&mut r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let mut b = [0u8; 2];
        r.read_exact(&mut b)?;
        let name = read_string(&mut r, u16::from_le_bytes(b) as usize)?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let arr = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        params.add(&name, arr)?;
    }
    Ok(Checkpoint { metadata, params })
}
