//! Synthetic desk-scale data: a two-class voxel scene for overfit tests and
//! a tiny three-class scan generator in the on-disk dataset layout.

use crate::data::kitti::{write_labels, write_scan, Scan};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::sparse::{Coordinate, CoordinateMap, SparseTensor};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::sync::Arc;

/// A flat 20x20 voxel patch split into two classes along the middle, with
/// class-correlated intensity and constant up normals. The two halves share
/// a boundary, so the geometry-aware loss sees non-trivial anisotropy.
pub fn two_patch_scene<T: Scalar>(seed: u64) -> (SparseTensor<T>, Vec<Option<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 20i32;
    let mut coords = Vec::with_capacity((side * side) as usize);
    let mut labels = Vec::with_capacity(coords.capacity());
    let mut feats = Array2::<T>::zeros(((side * side) as usize, 4));

    for i in 0..side {
        for j in 0..side {
            let row = (i * side + j) as usize;
            let class = usize::from(i >= side / 2);
            coords.push(Coordinate::new(0, i, j, 0));
            labels.push(Some(class));
            let base = if class == 0 { 0.25 } else { 0.75 };
            feats[[row, 0]] = T::from_f64(base + rng.gen_range(-0.05..0.05));
            feats[[row, 1]] = T::from_f64(0.0);
            feats[[row, 2]] = T::from_f64(0.0);
            feats[[row, 3]] = T::from_f64(1.0);
        }
    }
    let map = Arc::new(CoordinateMap::from_coordinates(coords).expect("unique grid"));
    let tensor = SparseTensor::new(map, feats, 1).expect("valid scene");
    (tensor, labels)
}

/// One synthetic scan: a ground plane (raw label 40), a wall segment
/// (raw 50), an object blob (raw 10) and a few unlabeled outliers (raw 0).
pub fn synthetic_scene(seed: u64) -> (Scan, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut remission = Vec::new();
    let mut labels = Vec::new();

    // Ground plane in front of the sensor.
    for ix in 0..24 {
        for iy in 0..16 {
            let x = 4.0 + ix as f64 * 0.35 + rng.gen_range(-0.05..0.05);
            let y = -2.8 + iy as f64 * 0.35 + rng.gen_range(-0.05..0.05);
            points.push([x, y, -1.7 + rng.gen_range(-0.02..0.02)]);
            remission.push(rng.gen_range(0.2..0.4));
            labels.push(40);
        }
    }
    // Wall at the far end.
    for iy in 0..12 {
        for iz in 0..8 {
            let y = -2.0 + iy as f64 * 0.35;
            let z = -1.6 + iz as f64 * 0.3;
            points.push([12.5 + rng.gen_range(-0.05..0.05), y, z]);
            remission.push(rng.gen_range(0.5..0.7));
            labels.push(50);
        }
    }
    // Object blob.
    for _ in 0..60 {
        points.push([
            7.0 + rng.gen_range(-0.4..0.4),
            1.5 + rng.gen_range(-0.4..0.4),
            -1.2 + rng.gen_range(-0.3..0.3),
        ]);
        remission.push(rng.gen_range(0.7..0.9));
        labels.push(10);
    }
    // A few unlabeled outliers.
    for _ in 0..8 {
        points.push([
            rng.gen_range(3.0..13.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.0..1.0),
        ]);
        remission.push(rng.gen_range(0.0..1.0));
        labels.push(0);
    }

    (Scan { points, remission }, labels)
}

/// Writes `count` synthetic scans under `root/sequences/<seq>/` in the
/// standard layout (`velodyne/NNNNNN.bin`, `labels/NNNNNN.label`).
pub fn write_synthetic_sequence(root: &Path, seq: &str, count: usize, seed: u64) -> Result<()> {
    let seq_dir = root.join("sequences").join(seq);
    let velo = seq_dir.join("velodyne");
    let labels_dir = seq_dir.join("labels");
    std::fs::create_dir_all(&velo)?;
    std::fs::create_dir_all(&labels_dir)?;
    for i in 0..count {
        let (scan, labels) = synthetic_scene(seed.wrapping_add(i as u64));
        write_scan(&velo.join(format!("{i:06}.bin")), &scan)?;
        write_labels(&labels_dir.join(format!("{i:06}.label")), &labels)?;
    }
    Ok(())
}
