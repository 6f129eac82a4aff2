//! Scan-to-sample pipeline: normal features via the range image, voxel
//! quantization, and ground-truth voxel labels by majority vote.

use crate::data::kitti::Scan;
use crate::error::Result;
use crate::range::{compute_normals, lift_to_points, project_to_range, RangeConfig};
use crate::scalar::Scalar;
use crate::sparse::{quantize_points, SparseTensor};
use ndarray::Array2;

/// One voxelized scan ready for the network: the input tensor, the
/// per-voxel ground-truth label (when labels were supplied) and the
/// point-to-voxel-row mapping for devoxelization.
#[derive(Debug, Clone)]
pub struct VoxelSample<T: Scalar> {
    pub tensor: SparseTensor<T>,
    pub voxel_labels: Vec<Option<usize>>,
    pub point_rows: Vec<usize>,
}

/// Per-point feature rows `[remission, n_x, n_y, n_z]`.
pub fn scan_features(scan: &Scan, range_cfg: &RangeConfig) -> Result<Array2<f64>> {
    let image = project_to_range(&scan.points, range_cfg)?;
    let normals = compute_normals(&image);
    let lifted = lift_to_points(&normals, image.mapping());
    let mut feats = Array2::<f64>::zeros((scan.len(), 4));
    for (i, (n, &r)) in lifted.iter().zip(scan.remission.iter()).enumerate() {
        feats[[i, 0]] = r;
        feats[[i, 1]] = n[0];
        feats[[i, 2]] = n[1];
        feats[[i, 3]] = n[2];
    }
    Ok(feats)
}

/// Majority label per voxel over its points' train ids; ignored points do
/// not vote and an all-ignored voxel stays ignored. Ties break toward the
/// lower class id.
fn majority_labels(
    point_rows: &[usize],
    point_labels: &[Option<usize>],
    voxel_count: usize,
    class_count: usize,
) -> Vec<Option<usize>> {
    let mut votes = vec![0u32; voxel_count * class_count];
    for (&row, label) in point_rows.iter().zip(point_labels.iter()) {
        if let Some(c) = *label {
            votes[row * class_count + c] += 1;
        }
    }
    (0..voxel_count)
        .map(|v| {
            let slice = &votes[v * class_count..(v + 1) * class_count];
            let best = slice.iter().copied().max().unwrap_or(0);
            if best == 0 {
                None
            } else {
                slice.iter().position(|&n| n == best)
            }
        })
        .collect()
}

/// Builds a [`VoxelSample`] from a scan: normal features, quantization at
/// `voxel_size`, and (when labels are given) per-voxel majority labels.
pub fn voxel_sample<T: Scalar>(
    scan: &Scan,
    point_labels: Option<&[Option<usize>]>,
    class_count: usize,
    voxel_size: f64,
    range_cfg: &RangeConfig,
    batch: u32,
) -> Result<VoxelSample<T>> {
    let feats = scan_features(scan, range_cfg)?;
    let feats_t = feats.mapv(T::from_f64);
    let (tensor, point_rows) = quantize_points(&scan.points, &feats_t, voxel_size, batch)?;
    let voxel_labels = match point_labels {
        Some(labels) => majority_labels(&point_rows, labels, tensor.rows(), class_count),
        None => vec![None; tensor.rows()],
    };
    Ok(VoxelSample {
        tensor,
        voxel_labels,
        point_rows,
    })
}

/// Concatenates per-scan samples into one batched sample with distinct
/// batch indices. Labels and mappings are concatenated in order; the
/// returned offsets give each scan's voxel-row base.
pub fn merge_batch<T: Scalar>(samples: Vec<VoxelSample<T>>) -> Result<(VoxelSample<T>, Vec<usize>)> {
    use crate::sparse::{Coordinate, CoordinateMap};
    use std::sync::Arc;

    assert!(!samples.is_empty(), "empty batch");
    let channels = samples[0].tensor.channels();
    let total_rows: usize = samples.iter().map(|s| s.tensor.rows()).sum();
    let mut coords: Vec<Coordinate> = Vec::with_capacity(total_rows);
    let mut feats = Array2::<T>::zeros((total_rows, channels));
    let mut labels = Vec::with_capacity(total_rows);
    let mut point_rows = Vec::new();
    let mut offsets = Vec::with_capacity(samples.len());

    let mut base = 0usize;
    for (b, sample) in samples.into_iter().enumerate() {
        offsets.push(base);
        for c in sample.tensor.coords().coordinates() {
            coords.push(Coordinate::new(b as u32, c.i, c.j, c.k));
        }
        feats
            .slice_mut(ndarray::s![base..base + sample.tensor.rows(), ..])
            .assign(sample.tensor.features());
        labels.extend_from_slice(&sample.voxel_labels);
        point_rows.extend(sample.point_rows.iter().map(|&r| r + base));
        base += sample.tensor.rows();
    }
    let map = Arc::new(CoordinateMap::from_coordinates(coords)?);
    let tensor = SparseTensor::new(map, feats, 1)?;
    Ok((
        VoxelSample {
            tensor,
            voxel_labels: labels,
            point_rows,
        },
        offsets,
    ))
}
