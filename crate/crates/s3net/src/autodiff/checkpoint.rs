//! Checkpoint serialization.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "S3NC"
//! version u32      1
//! count   u32      number of records
//! record:
//!   name_len u16, name bytes (UTF-8)
//!   rows u32, cols u32
//!   rows*cols f32 values, row-major
//! ```
//!
//! Values are stored as 32-bit floats regardless of the in-memory precision.

use crate::autodiff::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::Array2;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"S3NC";
const VERSION: u32 = 1;

pub fn save<T: Scalar, W: Write>(store: &ParamStore<T>, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter() {
        let name = p.name.as_bytes();
        out.write_all(&(name.len() as u16).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(p.value.nrows() as u32).to_le_bytes())?;
        out.write_all(&(p.value.ncols() as u32).to_le_bytes())?;
        for v in p.value.iter() {
            out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_to_path<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    save(store, std::io::BufWriter::new(file))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads every record as `(name, matrix)` in file order.
pub fn read_records<R: Read>(mut input: R) -> Result<Vec<(String, Array2<f32>)>> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut input)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let mut len_b = [0u8; 2];
        read_exact(&mut input, &mut len_b)?;
        let mut name_b = vec![0u8; u16::from_le_bytes(len_b) as usize];
        read_exact(&mut input, &mut name_b)?;
        let name = String::from_utf8(name_b)
            .map_err(|_| Error::Checkpoint("non-UTF-8 parameter name".into()))?;
        let rows = read_u32(&mut input)? as usize;
        let cols = read_u32(&mut input)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut b = [0u8; 4];
        for _ in 0..rows * cols {
            read_exact(&mut input, &mut b)?;
            data.push(f32::from_le_bytes(b));
        }
        let matrix = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        records.push((name, matrix));
    }
    Ok(records)
}

/// Loads a checkpoint into an existing store built by the same network
/// constructor. Every record must match a parameter by name and shape, and
/// every parameter must be covered.
pub fn load<T: Scalar, R: Read>(store: &mut ParamStore<T>, input: R) -> Result<()> {
    let records = read_records(input)?;
    if records.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "record count {} does not match parameter count {}",
            records.len(),
            store.len()
        )));
    }
    for (name, matrix) in records {
        let id = store
            .id_of(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        let expected = store.value(id).raw_dim();
        if matrix.raw_dim() != expected {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: shape {:?} does not match {:?}",
                matrix.raw_dim(),
                expected
            )));
        }
        store.set_value(id, matrix.mapv(|v| T::from_f64(v as f64)))?;
    }
    Ok(())
}

pub fn load_from_path<T: Scalar>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::open(path)?;
    load(store, std::io::BufReader::new(file))
}
