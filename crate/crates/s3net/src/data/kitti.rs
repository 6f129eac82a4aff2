//! Binary scan and label file IO.
//!
//! Scans are consecutive little-endian `f32` quadruples `(x, y, z,
//! remission)`; labels are little-endian `u32` per point with the semantic
//! class in the low 16 bits (the high bits carry instance ids and are
//! stripped on read).

use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

/// One scan: positions in meters plus per-point remission.
#[derive(Debug, Clone, Default)]
pub struct Scan {
    pub points: Vec<[f64; 3]>,
    pub remission: Vec<f64>,
}

impl Scan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn read_scan(path: &Path) -> Result<Scan> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::BadScanSize {
            bytes: bytes.len() as u64,
        });
    }
    let n = bytes.len() / 16;
    if n == 0 {
        return Err(Error::EmptyPointCloud);
    }
    let mut points = Vec::with_capacity(n);
    let mut remission = Vec::with_capacity(n);
    for (idx, chunk) in bytes.chunks_exact(16).enumerate() {
        let f = |i: usize| f32::from_le_bytes(chunk[i * 4..(i + 1) * 4].try_into().unwrap());
        let (x, y, z, r) = (f(0), f(1), f(2), f(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite() && r.is_finite()) {
            return Err(Error::NonFinitePoint { index: idx });
        }
        points.push([x as f64, y as f64, z as f64]);
        remission.push(r as f64);
    }
    Ok(Scan { points, remission })
}

pub fn write_scan(path: &Path, scan: &Scan) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (p, &r) in scan.points.iter().zip(scan.remission.iter()) {
        for v in [p[0] as f32, p[1] as f32, p[2] as f32, r as f32] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads per-point semantic labels (low 16 bits of each u32 record).
/// `expected_points`, when known, is validated against the record count.
pub fn read_labels(path: &Path, expected_points: Option<usize>) -> Result<Vec<u32>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Invalid(format!(
            "label file size {} not a multiple of 4",
            bytes.len()
        )));
    }
    let labels: Vec<u32> = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) & 0xFFFF)
        .collect();
    if let Some(points) = expected_points {
        if labels.len() != points {
            return Err(Error::LabelCountMismatch {
                labels: labels.len(),
                points,
            });
        }
    }
    Ok(labels)
}

/// Writes raw label ids, one little-endian u32 per point (the benchmark
/// submission layout).
pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for &l in labels {
        out.write_all(&l.to_le_bytes())?;
    }
    Ok(())
}
