use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::{Coordinate, CoordinateMap};
use ndarray::Array2;
use std::sync::Arc;

/// A sparse tensor: a coordinate map plus a row-aligned feature matrix.
///
/// `stride` is the spacing of the coordinates relative to the base voxel
/// grid; every spatial index is a multiple of it.
#[derive(Debug, Clone)]
pub struct SparseTensor<T: Scalar> {
    coords: Arc<CoordinateMap>,
    features: Array2<T>,
    stride: i32,
}

impl<T: Scalar> SparseTensor<T> {
    /// Validates the row count, the stride divisibility and feature
    /// finiteness before assembling the tensor.
    pub fn new(coords: Arc<CoordinateMap>, features: Array2<T>, stride: i32) -> Result<Self> {
        if coords.len() != features.nrows() {
            return Err(Error::ShapeMismatch {
                context: "sparse tensor rows",
                expected: coords.len().to_string(),
                got: features.nrows().to_string(),
            });
        }
        if stride < 1 {
            return Err(Error::Invalid(format!("stride must be >= 1, got {stride}")));
        }
        if let Some(c) = coords
            .coordinates()
            .iter()
            .find(|c| !c.divisible_by(stride))
        {
            return Err(Error::Invalid(format!(
                "coordinate {c:?} not divisible by stride {stride}"
            )));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("non-finite feature value".into()));
        }
        Ok(Self {
            coords,
            features,
            stride,
        })
    }

    /// Assembles without validation; used by operations whose outputs
    /// satisfy the invariants by construction.
    pub(crate) fn from_parts(
        coords: Arc<CoordinateMap>,
        features: Array2<T>,
        stride: i32,
    ) -> Self {
        debug_assert_eq!(coords.len(), features.nrows());
        debug_assert!(features.iter().all(|v| v.is_finite()));
        Self {
            coords,
            features,
            stride,
        }
    }

    pub fn coords(&self) -> &Arc<CoordinateMap> {
        &self.coords
    }

    pub fn features(&self) -> &Array2<T> {
        &self.features
    }

    pub fn into_features(self) -> Array2<T> {
        self.features
    }

    pub fn stride(&self) -> i32 {
        self.stride
    }

    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn channels(&self) -> usize {
        self.features.ncols()
    }
}

/// Voxelizes a point cloud: each point is floored to its voxel, points in
/// the same voxel are averaged, and the returned vector maps every input
/// point to its voxel row (used later to lift voxel labels back to points).
pub fn quantize_points<T: Scalar>(
    points: &[[f64; 3]],
    features: &Array2<T>,
    voxel_size: f64,
    batch: u32,
) -> Result<(SparseTensor<T>, Vec<usize>)> {
    assert!(voxel_size > 0.0, "voxel_size must be positive");
    if points.is_empty() {
        return Err(Error::EmptyPointCloud);
    }
    if points.len() != features.nrows() {
        return Err(Error::ShapeMismatch {
            context: "quantize features",
            expected: points.len().to_string(),
            got: features.nrows().to_string(),
        });
    }

    let mut voxels = Vec::with_capacity(points.len());
    for (idx, p) in points.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinitePoint { index: idx });
        }
        voxels.push(Coordinate::new(
            batch,
            (p[0] / voxel_size).floor() as i32,
            (p[1] / voxel_size).floor() as i32,
            (p[2] / voxel_size).floor() as i32,
        ));
    }

    let (map, assignment) = CoordinateMap::dedup_from(&voxels);
    let channels = features.ncols();
    let mut sums = Array2::<T>::zeros((map.len(), channels));
    let mut counts = vec![0usize; map.len()];
    for (pt, &row) in assignment.iter().enumerate() {
        let mut acc = sums.row_mut(row);
        acc += &features.row(pt);
        counts[row] += 1;
    }
    for (row, &n) in counts.iter().enumerate() {
        let inv = T::from_f64(1.0 / n as f64);
        sums.row_mut(row).mapv_inplace(|v| v * inv);
    }

    let tensor = SparseTensor::from_parts(Arc::new(map), sums, 1);
    Ok((tensor, assignment))
}
