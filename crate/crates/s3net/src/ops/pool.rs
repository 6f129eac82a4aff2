use crate::scalar::Scalar;
use crate::sparse::CoordinateMap;
use ndarray::Array2;

/// Row-to-batch grouping for pooling and per-batch broadcasting. Groups are
/// the present batch indices in ascending order; batches with zero rows do
/// not appear.
#[derive(Debug, Clone)]
pub struct BatchGroups {
    group_of_row: Vec<usize>,
    group_sizes: Vec<usize>,
    batch_ids: Vec<u32>,
}

impl BatchGroups {
    pub fn from_coords(coords: &CoordinateMap) -> Self {
        let batch_ids = coords.present_batches();
        let group_of_row = coords
            .coordinates()
            .iter()
            .map(|c| batch_ids.binary_search(&c.batch).unwrap())
            .collect::<Vec<_>>();
        let mut group_sizes = vec![0usize; batch_ids.len()];
        for &g in &group_of_row {
            group_sizes[g] += 1;
        }
        Self {
            group_of_row,
            group_sizes,
            batch_ids,
        }
    }

    pub fn group_count(&self) -> usize {
        self.batch_ids.len()
    }

    pub fn batch_ids(&self) -> &[u32] {
        &self.batch_ids
    }

    pub fn group_of_row(&self) -> &[usize] {
        &self.group_of_row
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }
}

/// Channel-wise mean over each batch's rows. Output row `g` is the mean of
/// the rows belonging to `groups.batch_ids()[g]`.
pub fn global_avg_pool<T: Scalar>(x: &Array2<T>, groups: &BatchGroups) -> Array2<T> {
    let mut out = Array2::<T>::zeros((groups.group_count(), x.ncols()));
    for (row, &g) in groups.group_of_row.iter().enumerate() {
        let mut acc = out.row_mut(g);
        acc += &x.row(row);
    }
    for (g, &n) in groups.group_sizes.iter().enumerate() {
        let inv = T::from_f64(1.0 / n as f64);
        out.row_mut(g).mapv_inplace(|v| v * inv);
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(
    grad: &Array2<T>,
    groups: &BatchGroups,
    n_rows: usize,
) -> Array2<T> {
    let mut out = Array2::<T>::zeros((n_rows, grad.ncols()));
    for (row, &g) in groups.group_of_row.iter().enumerate() {
        let inv = T::from_f64(1.0 / groups.group_sizes[g] as f64);
        let mut dst = out.row_mut(row);
        dst += &grad.row(g).mapv(|v| v * inv);
    }
    out
}

/// Scales each row of `x` by its batch's row in `scales` (one scale vector
/// per present batch, channel-wise).
pub fn broadcast_mul<T: Scalar>(
    x: &Array2<T>,
    scales: &Array2<T>,
    groups: &BatchGroups,
) -> Array2<T> {
    let mut out = x.clone();
    for (row, &g) in groups.group_of_row.iter().enumerate() {
        let mut dst = out.row_mut(row);
        dst *= &scales.row(g);
    }
    out
}

/// Gradients of [`broadcast_mul`] with respect to `x` and `scales`.
pub fn broadcast_mul_backward<T: Scalar>(
    grad: &Array2<T>,
    x: &Array2<T>,
    scales: &Array2<T>,
    groups: &BatchGroups,
) -> (Array2<T>, Array2<T>) {
    let mut gx = grad.clone();
    let mut gs = Array2::<T>::zeros(scales.raw_dim());
    for (row, &g) in groups.group_of_row.iter().enumerate() {
        {
            let mut dst = gx.row_mut(row);
            dst *= &scales.row(g);
        }
        let contrib = &grad.row(row) * &x.row(row);
        let mut dst = gs.row_mut(g);
        dst += &contrib;
    }
    (gx, gs)
}
