//! Training objectives: frequency-derived class weights, weighted
//! cross-entropy, the local-geometric-anisotropy weights, the
//! geometry-aware loss and their fixed combination.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::CoordinateMap;
use ndarray::{Array1, Array2};

/// Per-class label fractions over a whole training set.
#[derive(Debug, Clone)]
pub struct ClassFrequency {
    freqs: Vec<f64>,
}

impl ClassFrequency {
    /// Validates that frequencies are positive and sum to one.
    pub fn new(freqs: Vec<f64>) -> Result<Self> {
        if let Some(c) = freqs.iter().position(|&f| f <= 0.0) {
            return Err(Error::ZeroFrequency(c));
        }
        let total: f64 = freqs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "class frequencies sum to {total}, expected 1"
            )));
        }
        Ok(Self { freqs })
    }

    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::ZeroFrequency(c));
        }
        let total: u64 = counts.iter().sum();
        Ok(Self {
            freqs: counts.iter().map(|&n| n as f64 / total as f64).collect(),
        })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn class_count(&self) -> usize {
        self.freqs.len()
    }
}

/// Inverse square-root frequency weights: `alpha_c = 1 / sqrt(f_c)`.
pub fn class_weights(freqs: &ClassFrequency) -> Vec<f64> {
    freqs.freqs().iter().map(|f| 1.0 / f.sqrt()).collect()
}

/// Numerically stable per-row `log(sum(exp(row)))`.
pub fn log_sum_exp_rows<T: Scalar>(logits: &Array2<T>) -> Array1<T> {
    Array1::from_iter(logits.rows().into_iter().map(|row| {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        max + sum.ln()
    }))
}

/// Row-wise softmax.
pub fn softmax<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let lse = log_sum_exp_rows(logits);
    let mut out = logits.clone();
    for (mut row, &l) in out.rows_mut().into_iter().zip(lse.iter()) {
        row.mapv_inplace(|v| (v - l).exp());
    }
    out
}

/// Weighted cross-entropy over logits: softmax per row, then
/// `-alpha[label] * log p[label]`, averaged over the non-ignored rows.
pub fn wce_loss<T: Scalar>(
    logits: &Array2<T>,
    labels: &[Option<usize>],
    alpha: &[f64],
) -> Result<T> {
    if labels.len() != logits.nrows() {
        return Err(Error::ShapeMismatch {
            context: "wce_loss labels",
            expected: logits.nrows().to_string(),
            got: labels.len().to_string(),
        });
    }
    let supervised = labels.iter().filter(|l| l.is_some()).count();
    if supervised == 0 {
        return Err(Error::NoSupervisedPoints);
    }
    let lse = log_sum_exp_rows(logits);
    let mut total = T::zero();
    for (r, label) in labels.iter().enumerate() {
        if let Some(y) = *label {
            total = total + T::from_f64(alpha[y]) * (lse[r] - logits[[r, y]]);
        }
    }
    Ok(total / T::from_f64(supervised as f64))
}

/// Ground-truth labels on a voxel grid, row-aligned with a coordinate map.
/// `None` marks the ignore label.
#[derive(Debug, Clone)]
pub struct VoxelLabelGrid<'a> {
    coords: &'a CoordinateMap,
    labels: &'a [Option<usize>],
}

impl<'a> VoxelLabelGrid<'a> {
    pub fn new(coords: &'a CoordinateMap, labels: &'a [Option<usize>]) -> Result<Self> {
        if coords.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                context: "voxel label grid",
                expected: coords.len().to_string(),
                got: labels.len().to_string(),
            });
        }
        Ok(Self { coords, labels })
    }

    pub fn coords(&self) -> &CoordinateMap {
        self.coords
    }

    pub fn labels(&self) -> &[Option<usize>] {
        self.labels
    }
}

/// Per-voxel local geometric anisotropy inside the 3x3x3 window: for each
/// labeled voxel, `mlga` counts the labeled neighbors whose class differs
/// and `phi` counts the labeled neighbors. Ignored voxels get `(0, 0)` and
/// never contribute as neighbors.
pub fn compute_mlga(grid: &VoxelLabelGrid) -> Vec<(u32, u32)> {
    let mut out = vec![(0u32, 0u32); grid.coords.len()];
    for (row, label) in grid.labels.iter().enumerate() {
        let Some(class) = *label else {
            continue;
        };
        let center = grid.coords.coordinate_of(row);
        let mut mlga = 0u32;
        let mut phi = 0u32;
        for di in -1..=1 {
            for dj in -1..=1 {
                for dk in -1..=1 {
                    if di == 0 && dj == 0 && dk == 0 {
                        continue;
                    }
                    let neighbor = center.offset([di, dj, dk]);
                    if let Some(nrow) = grid.coords.row_of(&neighbor) {
                        if let Some(nclass) = grid.labels[nrow] {
                            phi += 1;
                            if nclass != class {
                                mlga += 1;
                            }
                        }
                    }
                }
            }
        }
        out[row] = (mlga, phi);
    }
    out
}

/// Normalized anisotropy weights `mlga / phi`, zero where `phi` is zero.
pub fn mlga_weights(grid: &VoxelLabelGrid) -> Vec<f64> {
    compute_mlga(grid)
        .iter()
        .map(|&(mlga, phi)| {
            if phi == 0 {
                0.0
            } else {
                mlga as f64 / phi as f64
            }
        })
        .collect()
}

/// Geometry-aware loss over an explicit prediction distribution: the mean
/// over labeled voxels of `weight * -log p[label]`, where `weight` is the
/// normalized anisotropy of the ground-truth labeling. Rows must sum to one.
pub fn geo_loss<T: Scalar>(
    probs: &Array2<T>,
    labels: &[Option<usize>],
    weights: &[f64],
) -> Result<T> {
    if labels.len() != probs.nrows() || weights.len() != probs.nrows() {
        return Err(Error::ShapeMismatch {
            context: "geo_loss rows",
            expected: probs.nrows().to_string(),
            got: format!("{}/{}", labels.len(), weights.len()),
        });
    }
    for (r, row) in probs.rows().into_iter().enumerate() {
        let sum: T = row.iter().cloned().sum();
        if (sum.as_f64() - 1.0).abs() > 1e-5 {
            return Err(Error::Invalid(format!(
                "prediction row {r} sums to {sum}, expected 1"
            )));
        }
    }
    let mut total = T::zero();
    let mut occupied = 0usize;
    for (r, label) in labels.iter().enumerate() {
        if let Some(y) = *label {
            occupied += 1;
            if weights[r] != 0.0 {
                total = total - T::from_f64(weights[r]) * probs[[r, y]].ln();
            }
        }
    }
    Ok(total / T::from_f64(occupied.max(1) as f64))
}

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub wce: f64,
    pub geo: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            wce: 0.75,
            geo: 0.25,
        }
    }
}

/// Combined objective on logits: `wce_weight * wce + geo_weight * geo`,
/// with the geometry term evaluated on the softmax of the logits and the
/// anisotropy weights computed from the ground-truth grid.
pub fn total_loss<T: Scalar>(
    logits: &Array2<T>,
    grid: &VoxelLabelGrid,
    alpha: &[f64],
    weights: LossWeights,
) -> Result<T> {
    let wce = wce_loss(logits, grid.labels(), alpha)?;
    let probs = softmax(logits);
    let geo = geo_loss(&probs, grid.labels(), &mlga_weights(grid))?;
    Ok(T::from_f64(weights.wce) * wce + T::from_f64(weights.geo) * geo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::Coordinate;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inverse_sqrt_weights() {
        let f = ClassFrequency::new(vec![0.04, 0.96]).unwrap();
        let alpha = class_weights(&f);
        assert_relative_eq!(alpha[0], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_single_class_weight_is_one() {
        let f = ClassFrequency::new(vec![1.0]).unwrap();
        assert_relative_eq!(class_weights(&f)[0], 1.0);
    }

    #[test]
    fn zero_frequency_rejected_with_class() {
        match ClassFrequency::from_counts(&[10, 0, 5]) {
            Err(Error::ZeroFrequency(c)) => assert_eq!(c, 1),
            other => panic!("expected ZeroFrequency, got {other:?}"),
        }
    }

    #[test]
    fn confident_correct_prediction_has_near_zero_loss() {
        let logits = array![[30.0f64, 0.0, 0.0]];
        let labels = [Some(0usize)];
        let loss = wce_loss(&logits, &labels, &[1.0, 1.0, 1.0]).unwrap();
        assert!(loss < 1e-12, "loss {loss}");
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        for c in [2usize, 5, 19] {
            let logits = Array2::<f64>::zeros((4, c));
            let labels: Vec<Option<usize>> = (0..4).map(|i| Some(i % c)).collect();
            let alpha = vec![1.0; c];
            let loss = wce_loss(&logits, &labels, &alpha).unwrap();
            assert_relative_eq!(loss, (c as f64).ln(), epsilon = 1e-9);
        }
    }

    #[test]
    fn wce_matches_scalar_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = Array2::from_shape_fn((20, 5), |_| rng.gen_range(-3.0..3.0));
        let labels: Vec<Option<usize>> = (0..20)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    None
                } else {
                    Some(rng.gen_range(0..5))
                }
            })
            .collect();
        let alpha: Vec<f64> = (0..5).map(|_| rng.gen_range(0.5..4.0)).collect();
        let loss = wce_loss(&logits, &labels, &alpha).unwrap();

        // Naive oracle: explicit softmax, scalar accumulation.
        let mut total = 0.0;
        let mut count = 0usize;
        for (r, label) in labels.iter().enumerate() {
            if let Some(y) = *label {
                let row: Vec<f64> = logits.row(r).to_vec();
                let denom: f64 = row.iter().map(|v| v.exp()).sum();
                let p = row[y].exp() / denom;
                total += -alpha[y] * p.ln();
                count += 1;
            }
        }
        assert_relative_eq!(loss, total / count as f64, epsilon = 1e-7);
    }

    #[test]
    fn all_rows_ignored_is_an_error() {
        let logits = Array2::<f64>::zeros((3, 2));
        let labels = [None, None, None];
        assert!(matches!(
            wce_loss(&logits, &labels, &[1.0, 1.0]),
            Err(Error::NoSupervisedPoints)
        ));
    }

    fn grid_cube(n: i32, label_fn: impl Fn(i32, i32, i32) -> Option<usize>) -> (CoordinateMap, Vec<Option<usize>>) {
        let mut coords = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    coords.push(Coordinate::new(0, i, j, k));
                    labels.push(label_fn(i, j, k));
                }
            }
        }
        (CoordinateMap::from_coordinates(coords).unwrap(), labels)
    }

    #[test]
    fn homogeneous_region_has_zero_mlga() {
        let (coords, labels) = grid_cube(3, |_, _, _| Some(1));
        let grid = VoxelLabelGrid::new(&coords, &labels).unwrap();
        let mlga = compute_mlga(&grid);
        let center = coords.row_of(&Coordinate::new(0, 1, 1, 1)).unwrap();
        assert_eq!(mlga[center], (0, 26));
    }

    #[test]
    fn isolated_class_voxel_has_full_mlga() {
        let (coords, mut labels) = grid_cube(3, |_, _, _| Some(0));
        let center = coords.row_of(&Coordinate::new(0, 1, 1, 1)).unwrap();
        labels[center] = Some(7);
        let grid = VoxelLabelGrid::new(&coords, &labels).unwrap();
        let mlga = compute_mlga(&grid);
        assert_eq!(mlga[center], (26, 26));
    }

    #[test]
    fn mlga_matches_brute_force_on_random_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (coords, labels) = {
            let mut coords = Vec::new();
            let mut labels = Vec::new();
            for i in 0..8 {
                for j in 0..8 {
                    for k in 0..8 {
                        if rng.gen_bool(0.6) {
                            coords.push(Coordinate::new(0, i, j, k));
                            labels.push(if rng.gen_bool(0.1) {
                                None
                            } else {
                                Some(rng.gen_range(0..4usize))
                            });
                        }
                    }
                }
            }
            (CoordinateMap::from_coordinates(coords).unwrap(), labels)
        };
        let grid = VoxelLabelGrid::new(&coords, &labels).unwrap();
        let got = compute_mlga(&grid);

        // Brute force over all voxel pairs.
        for (row, label) in labels.iter().enumerate() {
            let Some(class) = *label else {
                assert_eq!(got[row], (0, 0));
                continue;
            };
            let c = coords.coordinate_of(row);
            let mut mlga = 0u32;
            let mut phi = 0u32;
            for (orow, other) in labels.iter().enumerate() {
                if orow == row {
                    continue;
                }
                let oc = coords.coordinate_of(orow);
                if (oc.i - c.i).abs() <= 1 && (oc.j - c.j).abs() <= 1 && (oc.k - c.k).abs() <= 1 {
                    if let Some(ocls) = *other {
                        phi += 1;
                        if ocls != class {
                            mlga += 1;
                        }
                    }
                }
            }
            assert_eq!(got[row], (mlga, phi), "row {row}");
        }
    }

    #[test]
    fn mlga_ratio_bounded_by_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (coords, labels) = grid_cube(5, |_, _, _| None);
        let labels: Vec<Option<usize>> = labels
            .iter()
            .map(|_| {
                if rng.gen_bool(0.3) {
                    None
                } else {
                    Some(rng.gen_range(0..3usize))
                }
            })
            .collect();
        let grid = VoxelLabelGrid::new(&coords, &labels).unwrap();
        for w in mlga_weights(&grid) {
            assert!((0.0..=1.0).contains(&w));
        }
    }

    #[test]
    fn homogeneous_labels_zero_geo_loss() {
        let (coords, labels) = grid_cube(3, |_, _, _| Some(2));
        let grid = VoxelLabelGrid::new(&coords, &labels).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Array2::from_shape_fn((coords.len(), 4), |_| rng.gen_range(-2.0..2.0));
        let probs = softmax(&logits);
        let loss = geo_loss(&probs, &labels, &mlga_weights(&grid)).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn boundary_voxel_contribution_is_exact() {
        // One voxel with weight 1 and p[label] = exp(-1) contributes exactly
        // 1.0 before averaging.
        let coords = CoordinateMap::from_coordinates(vec![Coordinate::new(0, 0, 0, 0)]).unwrap();
        let labels = vec![Some(0usize)];
        let p = (-1.0f64).exp();
        let probs = array![[p, 1.0 - p]];
        let loss = geo_loss(&probs, &labels, &[1.0]).unwrap();
        assert_relative_eq!(loss, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn geo_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (coords, labels) = grid_cube(4, |_, _, _| None);
        let labels: Vec<Option<usize>> = labels
            .iter()
            .map(|_| {
                if rng.gen_bool(0.15) {
                    None
                } else {
                    Some(rng.gen_range(0..3usize))
                }
            })
            .collect();
        let grid = VoxelLabelGrid::new(&coords, &labels).unwrap();
        let logits = Array2::from_shape_fn((coords.len(), 3), |_| rng.gen_range(-2.0..2.0));
        let probs = softmax(&logits);
        let loss = geo_loss(&probs, &labels, &mlga_weights(&grid)).unwrap();

        // Voxel-by-voxel oracle with its own neighborhood scan.
        let mut total = 0.0f64;
        let mut occupied = 0usize;
        for (row, label) in labels.iter().enumerate() {
            let Some(y) = *label else { continue };
            occupied += 1;
            let c = coords.coordinate_of(row);
            let mut mlga = 0.0;
            let mut phi = 0.0;
            for (orow, other) in labels.iter().enumerate() {
                if orow == row {
                    continue;
                }
                let oc = coords.coordinate_of(orow);
                if (oc.i - c.i).abs() <= 1 && (oc.j - c.j).abs() <= 1 && (oc.k - c.k).abs() <= 1 {
                    if let Some(ocls) = *other {
                        phi += 1.0;
                        if ocls != y {
                            mlga += 1.0;
                        }
                    }
                }
            }
            if phi > 0.0 {
                total += (mlga / phi) * -(probs[[row, y]].ln());
            }
        }
        assert_relative_eq!(loss, total / occupied as f64, epsilon = 1e-7);
    }

    #[test]
    fn geo_invariant_under_consistent_class_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let (coords, _) = grid_cube(4, |_, _, _| None);
        let labels: Vec<Option<usize>> = (0..coords.len())
            .map(|_| Some(rng.gen_range(0..3usize)))
            .collect();
        let logits = Array2::from_shape_fn((coords.len(), 3), |_| rng.gen_range(-2.0..2.0));
        let probs = softmax(&logits);

        let grid = VoxelLabelGrid::new(&coords, &labels).unwrap();
        let base = geo_loss(&probs, &labels, &mlga_weights(&grid)).unwrap();

        // Permute classes 0->1->2->0 in both labels and prediction columns.
        let perm = [1usize, 2, 0];
        let plabels: Vec<Option<usize>> = labels.iter().map(|l| l.map(|y| perm[y])).collect();
        let mut pprobs = probs.clone();
        for r in 0..probs.nrows() {
            for c in 0..3 {
                pprobs[[r, perm[c]]] = probs[[r, c]];
            }
        }
        let pgrid = VoxelLabelGrid::new(&coords, &plabels).unwrap();
        let permuted = geo_loss(&pprobs, &plabels, &mlga_weights(&pgrid)).unwrap();
        assert_relative_eq!(base, permuted, epsilon = 1e-12);
    }

    #[test]
    fn total_is_weighted_component_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let (coords, labels) = grid_cube(4, |_, _, _| None);
        let labels: Vec<Option<usize>> = labels
            .iter()
            .map(|_| Some(rng.gen_range(0..3usize)))
            .collect();
        let grid = VoxelLabelGrid::new(&coords, &labels).unwrap();
        let logits = Array2::from_shape_fn((coords.len(), 3), |_| rng.gen_range(-2.0..2.0));
        let alpha = [1.5, 0.75, 2.0];

        let total = total_loss(&logits, &grid, &alpha, LossWeights::default()).unwrap();
        let wce = wce_loss(&logits, &labels, &alpha).unwrap();
        let geo = geo_loss(&softmax(&logits), &labels, &mlga_weights(&grid)).unwrap();
        assert_relative_eq!(total, 0.75 * wce + 0.25 * geo, epsilon = 1e-7);
    }

    #[test]
    fn zero_geo_weight_reduces_to_scaled_wce() {
        let (coords, labels) = grid_cube(2, |i, _, _| Some(i as usize % 2));
        let grid = VoxelLabelGrid::new(&coords, &labels).unwrap();
        let logits = Array2::<f64>::zeros((coords.len(), 2));
        let alpha = [1.0, 1.0];
        let total = total_loss(
            &logits,
            &grid,
            &alpha,
            LossWeights { wce: 0.75, geo: 0.0 },
        )
        .unwrap();
        let wce = wce_loss(&logits, &labels, &alpha).unwrap();
        assert_relative_eq!(total, 0.75 * wce, epsilon = 1e-12);
    }
}
