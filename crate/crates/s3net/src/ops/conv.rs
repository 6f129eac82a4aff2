use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::{CoordinateMap, KernelMap, SparseTensor};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use std::sync::Arc;

/// Weights of one sparse convolution: per-offset matrices of shape
/// `in_channels x out_channels`, stored stacked row-wise, plus an optional
/// per-output-channel bias.
#[derive(Debug, Clone)]
pub struct ConvWeights<T: Scalar> {
    stacked: Array2<T>,
    bias: Option<Array1<T>>,
    in_channels: usize,
}

impl<T: Scalar> ConvWeights<T> {
    pub fn new(stacked: Array2<T>, bias: Option<Array1<T>>, in_channels: usize) -> Result<Self> {
        if in_channels == 0 || stacked.nrows() % in_channels != 0 {
            return Err(Error::ShapeMismatch {
                context: "conv weights",
                expected: format!("rows divisible by in_channels {in_channels}"),
                got: stacked.nrows().to_string(),
            });
        }
        if let Some(b) = &bias {
            if b.len() != stacked.ncols() {
                return Err(Error::ShapeMismatch {
                    context: "conv bias",
                    expected: stacked.ncols().to_string(),
                    got: b.len().to_string(),
                });
            }
        }
        if !stacked.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("non-finite convolution weight".into()));
        }
        Ok(Self {
            stacked,
            bias,
            in_channels,
        })
    }

    /// Identity weights for a single-offset (size-1) kernel.
    pub fn identity(channels: usize) -> Self {
        Self {
            stacked: Array2::eye(channels),
            bias: None,
            in_channels: channels,
        }
    }

    pub fn offset_count(&self) -> usize {
        self.stacked.nrows() / self.in_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.stacked.ncols()
    }

    pub fn offset_matrix(&self, i: usize) -> ArrayView2<'_, T> {
        let c = self.in_channels;
        self.stacked.slice(s![i * c..(i + 1) * c, ..])
    }

    pub fn stacked(&self) -> &Array2<T> {
        &self.stacked
    }

    pub fn bias(&self) -> Option<&Array1<T>> {
        self.bias.as_ref()
    }
}

fn check_kmap(kmap: &KernelMap, n_in: usize, n_out: usize) -> Result<()> {
    if kmap.input_count() != n_in {
        return Err(Error::KernelMapOutOfRange {
            side: "input",
            row: kmap.input_count(),
            count: n_in,
        });
    }
    if kmap.output_count() != n_out {
        return Err(Error::KernelMapOutOfRange {
            side: "output",
            row: kmap.output_count(),
            count: n_out,
        });
    }
    Ok(())
}

/// Gather-multiply-scatter convolution on raw feature matrices.
///
/// For each offset list, the mapped input rows are gathered into a dense
/// block, multiplied by that offset's weight matrix and scattered (added)
/// onto the mapped output rows. Output rows with no contributing pairs keep
/// the bias (or zero). Scatter order follows the pair lists, so results are
/// reproducible.
pub fn forward_features<T: Scalar>(
    x: &Array2<T>,
    w_stacked: &Array2<T>,
    in_channels: usize,
    bias: Option<ArrayView1<'_, T>>,
    kmap: &KernelMap,
) -> Array2<T> {
    let out_channels = w_stacked.ncols();
    let n_out = kmap.output_count();
    let mut out = Array2::<T>::zeros((n_out, out_channels));
    if let Some(b) = bias {
        out += &b.broadcast((n_out, out_channels)).unwrap();
    }
    for (oi, pairs) in kmap.lists().iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let wi = w_stacked.slice(s![oi * in_channels..(oi + 1) * in_channels, ..]);
        let idx: Vec<usize> = pairs.iter().map(|&(a, _)| a as usize).collect();
        let gathered = x.select(Axis(0), &idx);
        let product = gathered.dot(&wi);
        for (p, &(_, b)) in pairs.iter().enumerate() {
            let mut row = out.row_mut(b as usize);
            row += &product.row(p);
        }
    }
    out
}

/// Gradients of [`forward_features`] with respect to the input features, the
/// stacked weights and the bias.
pub fn backward_features<T: Scalar>(
    grad_out: &Array2<T>,
    x: &Array2<T>,
    w_stacked: &Array2<T>,
    in_channels: usize,
    kmap: &KernelMap,
) -> (Array2<T>, Array2<T>, Array1<T>) {
    let mut grad_x = Array2::<T>::zeros(x.raw_dim());
    let mut grad_w = Array2::<T>::zeros(w_stacked.raw_dim());
    let grad_b = grad_out.sum_axis(Axis(0));

    for (oi, pairs) in kmap.lists().iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let wi = w_stacked.slice(s![oi * in_channels..(oi + 1) * in_channels, ..]);
        let in_idx: Vec<usize> = pairs.iter().map(|&(a, _)| a as usize).collect();
        let out_idx: Vec<usize> = pairs.iter().map(|&(_, b)| b as usize).collect();
        let gathered_x = x.select(Axis(0), &in_idx);
        let gathered_g = grad_out.select(Axis(0), &out_idx);

        // grad_x[a] += g[b] W_i^T
        let gx = gathered_g.dot(&wi.t());
        for (p, &a) in in_idx.iter().enumerate() {
            let mut row = grad_x.row_mut(a);
            row += &gx.row(p);
        }
        // grad_W_i += x[a]^T g[b]
        let gw = gathered_x.t().dot(&gathered_g);
        let mut slot = grad_w.slice_mut(s![oi * in_channels..(oi + 1) * in_channels, ..]);
        slot += &gw;
    }
    (grad_x, grad_w, grad_b)
}

/// Adjoint of [`forward_features`]: scatters rows living on the kernel map's
/// output side back onto its input side. The composition of the two with a
/// shared kernel map is an exact matrix transpose pair (bias excluded).
pub fn transpose_features<T: Scalar>(
    x: &Array2<T>,
    w_stacked: &Array2<T>,
    in_channels: usize,
    kmap: &KernelMap,
) -> Array2<T> {
    let n_target = kmap.input_count();
    let mut out = Array2::<T>::zeros((n_target, in_channels));
    for (oi, pairs) in kmap.lists().iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let wi = w_stacked.slice(s![oi * in_channels..(oi + 1) * in_channels, ..]);
        let idx: Vec<usize> = pairs.iter().map(|&(_, b)| b as usize).collect();
        let gathered = x.select(Axis(0), &idx);
        let product = gathered.dot(&wi.t());
        for (p, &(a, _)) in pairs.iter().enumerate() {
            let mut row = out.row_mut(a as usize);
            row += &product.row(p);
        }
    }
    out
}

/// Gradients of [`transpose_features`] with respect to its input (rows on
/// the kernel map's output side) and the stacked weights.
pub fn transpose_backward_features<T: Scalar>(
    grad_out: &Array2<T>,
    x: &Array2<T>,
    w_stacked: &Array2<T>,
    in_channels: usize,
    kmap: &KernelMap,
) -> (Array2<T>, Array2<T>) {
    let mut grad_x = Array2::<T>::zeros(x.raw_dim());
    let mut grad_w = Array2::<T>::zeros(w_stacked.raw_dim());
    for (oi, pairs) in kmap.lists().iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let wi = w_stacked.slice(s![oi * in_channels..(oi + 1) * in_channels, ..]);
        let fine_idx: Vec<usize> = pairs.iter().map(|&(a, _)| a as usize).collect();
        let coarse_idx: Vec<usize> = pairs.iter().map(|&(_, b)| b as usize).collect();
        let gathered_g = grad_out.select(Axis(0), &fine_idx);
        let gathered_x = x.select(Axis(0), &coarse_idx);

        // grad_x[b] += g[a] W_i
        let gx = gathered_g.dot(&wi);
        for (p, &b) in coarse_idx.iter().enumerate() {
            let mut row = grad_x.row_mut(b);
            row += &gx.row(p);
        }
        // grad_W_i += g[a]^T x[b]
        let gw = gathered_g.t().dot(&gathered_x);
        let mut slot = grad_w.slice_mut(s![oi * in_channels..(oi + 1) * in_channels, ..]);
        slot += &gw;
    }
    (grad_x, grad_w)
}

/// Sparse convolution at the tensor level: applies [`forward_features`] and
/// re-wraps the result on the output coordinates at `out_stride`.
pub fn sparse_conv_forward<T: Scalar>(
    x: &SparseTensor<T>,
    w: &ConvWeights<T>,
    kmap: &KernelMap,
    out_coords: &Arc<CoordinateMap>,
    out_stride: i32,
) -> Result<SparseTensor<T>> {
    if x.channels() != w.in_channels() {
        return Err(Error::ChannelMismatch {
            context: "sparse_conv_forward",
            expected: w.in_channels(),
            got: x.channels(),
        });
    }
    check_kmap(kmap, x.rows(), out_coords.len())?;
    let out = forward_features(
        x.features(),
        w.stacked(),
        w.in_channels(),
        w.bias().map(|b| b.view()),
        kmap,
    );
    Ok(SparseTensor::from_parts(out_coords.clone(), out, out_stride))
}

/// Tensor-level gradient of [`sparse_conv_forward`].
pub fn sparse_conv_backward<T: Scalar>(
    grad_out: &Array2<T>,
    x: &SparseTensor<T>,
    w: &ConvWeights<T>,
    kmap: &KernelMap,
) -> Result<(Array2<T>, ConvWeights<T>)> {
    if grad_out.nrows() != kmap.output_count() {
        return Err(Error::ShapeMismatch {
            context: "sparse_conv_backward grad rows",
            expected: kmap.output_count().to_string(),
            got: grad_out.nrows().to_string(),
        });
    }
    if grad_out.ncols() != w.out_channels() {
        return Err(Error::ChannelMismatch {
            context: "sparse_conv_backward grad channels",
            expected: w.out_channels(),
            got: grad_out.ncols(),
        });
    }
    check_kmap(kmap, x.rows(), grad_out.nrows())?;
    let (gx, gw, gb) = backward_features(grad_out, x.features(), w.stacked(), w.in_channels(), kmap);
    let grads = ConvWeights::new(gw, w.bias().map(|_| gb), w.in_channels())?;
    Ok((gx, grads))
}

/// Transposed sparse convolution onto a cached coordinate map. The kernel
/// map must be the one a forward convolution from `target` to `x.coords()`
/// would use; the result is the exact adjoint of that forward map.
pub fn sparse_conv_transpose<T: Scalar>(
    x: &SparseTensor<T>,
    w: &ConvWeights<T>,
    kmap: &KernelMap,
    target: &Arc<CoordinateMap>,
    target_stride: i32,
) -> Result<SparseTensor<T>> {
    if x.channels() != w.out_channels() {
        return Err(Error::ChannelMismatch {
            context: "sparse_conv_transpose",
            expected: w.out_channels(),
            got: x.channels(),
        });
    }
    check_kmap(kmap, target.len(), x.rows())?;
    let out = transpose_features(x.features(), w.stacked(), w.in_channels(), kmap);
    Ok(SparseTensor::from_parts(target.clone(), out, target_stride))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{build_kernel_map, Coordinate, KernelOffsets};
    use approx::assert_relative_eq;
    use ndarray::{array, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(coords: &[(i32, i32, i32)]) -> Arc<CoordinateMap> {
        Arc::new(
            CoordinateMap::from_coordinates(
                coords
                    .iter()
                    .map(|&(i, j, k)| Coordinate::new(0, i, j, k))
                    .collect(),
            )
            .unwrap(),
        )
    }

    fn random_weights(
        rng: &mut ChaCha8Rng,
        offsets: usize,
        cin: usize,
        cout: usize,
        bias: bool,
    ) -> ConvWeights<f64> {
        let stacked = Array2::from_shape_fn((offsets * cin, cout), |_| rng.gen_range(-1.0..1.0));
        let b = bias.then(|| Array1::from_shape_fn(cout, |_| rng.gen_range(-0.5..0.5)));
        ConvWeights::new(stacked, b, cin).unwrap()
    }

    #[test]
    fn identity_size_one_conv_is_identity() {
        let coords = cloud(&[(0, 0, 0), (3, 1, -2)]);
        let x = SparseTensor::new(coords.clone(), array![[1.0, 2.0], [3.0, 4.0]], 1).unwrap();
        let offsets = KernelOffsets::cubic(1).unwrap();
        let kmap = build_kernel_map(&coords, &coords, &offsets, 1);
        let w = ConvWeights::identity(2);
        let y = sparse_conv_forward(&x, &w, &kmap, &coords, 1).unwrap();
        assert_eq!(y.features(), x.features());
    }

    #[test]
    fn isolated_point_applies_center_matrix_only() {
        let coords = cloud(&[(5, 5, 5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let offsets = KernelOffsets::cubic(3).unwrap();
        let w = random_weights(&mut rng, offsets.len(), 3, 2, false);
        let x = SparseTensor::new(coords.clone(), array![[1.0, -2.0, 0.5]], 1).unwrap();
        let kmap = build_kernel_map(&coords, &coords, &offsets, 1);
        let y = sparse_conv_forward(&x, &w, &kmap, &coords, 1).unwrap();
        let expected = x.features().dot(&w.offset_matrix(offsets.center()));
        assert_relative_eq!(y.features()[[0, 0]], expected[[0, 0]], epsilon = 1e-12);
        assert_relative_eq!(y.features()[[0, 1]], expected[[0, 1]], epsilon = 1e-12);
    }

    /// Dense triple-loop convolution over a fully occupied grid, used as an
    /// independent oracle for interior rows.
    pub(crate) fn dense_conv_oracle(
        grid: &Array3<Vec<f64>>,
        w: &ConvWeights<f64>,
        offsets: &KernelOffsets,
    ) -> Array3<Vec<f64>> {
        let (nx, ny, nz) = grid.dim();
        let cout = w.out_channels();
        let mut out = Array3::from_elem((nx, ny, nz), vec![0.0; cout]);
        for x in 0..nx as i32 {
            for y in 0..ny as i32 {
                for z in 0..nz as i32 {
                    let mut acc = vec![0.0; cout];
                    for (oi, d) in offsets.offsets().iter().enumerate() {
                        let (sx, sy, sz) = (x + d[0], y + d[1], z + d[2]);
                        if sx < 0
                            || sy < 0
                            || sz < 0
                            || sx >= nx as i32
                            || sy >= ny as i32
                            || sz >= nz as i32
                        {
                            continue;
                        }
                        let feat = &grid[[sx as usize, sy as usize, sz as usize]];
                        let wi = w.offset_matrix(oi);
                        for co in 0..cout {
                            for (ci, &f) in feat.iter().enumerate() {
                                acc[co] += f * wi[[ci, co]];
                            }
                        }
                    }
                    if let Some(b) = w.bias() {
                        for co in 0..cout {
                            acc[co] += b[co];
                        }
                    }
                    out[[x as usize, y as usize, z as usize]] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn dense_grid_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 6usize;
        let cin = 8;
        let cout = 8;
        let offsets = KernelOffsets::cubic(3).unwrap();
        let w = random_weights(&mut rng, offsets.len(), cin, cout, true);

        let mut coords = Vec::new();
        let mut grid = Array3::from_elem((n, n, n), vec![0.0; cin]);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    coords.push(Coordinate::new(0, i as i32, j as i32, k as i32));
                    grid[[i, j, k]] = (0..cin).map(|_| rng.gen_range(-1.0..1.0)).collect();
                }
            }
        }
        let map = Arc::new(CoordinateMap::from_coordinates(coords).unwrap());
        let mut feats = Array2::<f64>::zeros((map.len(), cin));
        for (row, c) in map.coordinates().iter().enumerate() {
            for ch in 0..cin {
                feats[[row, ch]] = grid[[c.i as usize, c.j as usize, c.k as usize]][ch];
            }
        }
        let x = SparseTensor::new(map.clone(), feats, 1).unwrap();
        let kmap = build_kernel_map(&map, &map, &offsets, 1);
        let y = sparse_conv_forward(&x, &w, &kmap, &map, 1).unwrap();

        let oracle = dense_conv_oracle(&grid, &w, &offsets);
        for (row, c) in map.coordinates().iter().enumerate() {
            let interior = (1..n as i32 - 1).contains(&c.i)
                && (1..n as i32 - 1).contains(&c.j)
                && (1..n as i32 - 1).contains(&c.k);
            if !interior {
                continue;
            }
            let expected = &oracle[[c.i as usize, c.j as usize, c.k as usize]];
            for ch in 0..cout {
                let got = y.features()[[row, ch]];
                let rel = (got - expected[ch]).abs() / expected[ch].abs().max(1.0);
                assert!(rel < 1e-6, "row {row} ch {ch}: {got} vs {}", expected[ch]);
            }
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let coords = cloud(&[(0, 0, 0), (1, 0, 0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let offsets = KernelOffsets::cubic(3).unwrap();
        let w = random_weights(&mut rng, offsets.len(), 2, 2, true);
        let x = SparseTensor::new(coords.clone(), array![[1.0, 2.0], [3.0, 4.0]], 1).unwrap();
        let kmap = build_kernel_map(&coords, &coords, &offsets, 1);
        let grad_out = Array2::<f64>::zeros((2, 2));
        let (gx, gw) = sparse_conv_backward(&grad_out, &x, &w, &kmap).unwrap();
        assert!(gx.iter().all(|&v| v == 0.0));
        assert!(gw.stacked().iter().all(|&v| v == 0.0));
        assert!(gw.bias().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_conv_backward_passes_grad_through() {
        let coords = cloud(&[(0, 0, 0), (2, 2, 2)]);
        let offsets = KernelOffsets::cubic(1).unwrap();
        let w = ConvWeights::identity(2);
        let x = SparseTensor::new(coords.clone(), array![[1.0, 2.0], [3.0, 4.0]], 1).unwrap();
        let kmap = build_kernel_map(&coords, &coords, &offsets, 1);
        let grad_out = array![[0.1, -0.2], [0.3, 0.4]];
        let (gx, _) = sparse_conv_backward(&grad_out, &x, &w, &kmap).unwrap();
        assert_eq!(gx, grad_out);
    }

    /// Loss = sum of squared outputs; every analytic gradient component must
    /// match a central finite difference.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coords = cloud(&[(0, 0, 0), (1, 0, 0), (0, 1, 0), (2, 2, 2), (1, 1, 0)]);
        let offsets = KernelOffsets::cubic(3).unwrap();
        let cin = 3;
        let cout = 2;
        let w = random_weights(&mut rng, offsets.len(), cin, cout, true);
        let feats = Array2::from_shape_fn((coords.len(), cin), |_| rng.gen_range(-1.0..1.0));
        let kmap = build_kernel_map(&coords, &coords, &offsets, 1);

        let loss = |feats: &Array2<f64>, w: &ConvWeights<f64>| -> f64 {
            let x = SparseTensor::new(coords.clone(), feats.clone(), 1).unwrap();
            let y = sparse_conv_forward(&x, w, &kmap, &coords, 1).unwrap();
            y.features().iter().map(|v| v * v).sum()
        };

        // Analytic: dL/dy = 2y, chain through backward.
        let x = SparseTensor::new(coords.clone(), feats.clone(), 1).unwrap();
        let y = sparse_conv_forward(&x, &w, &kmap, &coords, 1).unwrap();
        let grad_out = y.features().mapv(|v| 2.0 * v);
        let (gx, gw) = sparse_conv_backward(&grad_out, &x, &w, &kmap).unwrap();

        let h = 1e-5;
        let check = |got: f64, fd: f64| {
            let rel = (got - fd).abs() / got.abs().max(fd.abs()).max(1.0);
            assert!(rel < 1e-4, "analytic {got} vs fd {fd}");
        };

        for r in 0..feats.nrows() {
            for c in 0..feats.ncols() {
                let mut fp = feats.clone();
                fp[[r, c]] += h;
                let mut fm = feats.clone();
                fm[[r, c]] -= h;
                check(gx[[r, c]], (loss(&fp, &w) - loss(&fm, &w)) / (2.0 * h));
            }
        }
        for r in 0..w.stacked().nrows() {
            for c in 0..w.stacked().ncols() {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp.stacked[[r, c]] += h;
                wm.stacked[[r, c]] -= h;
                check(
                    gw.stacked()[[r, c]],
                    (loss(&feats, &wp) - loss(&feats, &wm)) / (2.0 * h),
                );
            }
        }
        for c in 0..cout {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp.bias.as_mut().unwrap()[c] += h;
            wm.bias.as_mut().unwrap()[c] -= h;
            check(
                gw.bias().unwrap()[c],
                (loss(&feats, &wp) - loss(&feats, &wm)) / (2.0 * h),
            );
        }
    }

    #[test]
    fn transpose_of_identity_is_identity() {
        let coords = cloud(&[(0, 0, 0), (4, 4, 4)]);
        let offsets = KernelOffsets::cubic(1).unwrap();
        let w = ConvWeights::identity(2);
        let x = SparseTensor::new(coords.clone(), array![[1.0, 2.0], [3.0, 4.0]], 1).unwrap();
        let kmap = build_kernel_map(&coords, &coords, &offsets, 1);
        let y = sparse_conv_transpose(&x, &w, &kmap, &coords, 1).unwrap();
        assert_eq!(y.features(), x.features());
    }

    #[test]
    fn forward_and_transpose_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let fine = random_cloud(&mut rng, 40);
            let coarse = Arc::new(crate::sparse::stride_coordinates(&fine, 1, 2));
            let offsets = KernelOffsets::cubic(3).unwrap();
            let cin = 3;
            let cout = 2;
            let w = random_weights(&mut rng, offsets.len(), cin, cout, false);
            let kmap = build_kernel_map(&fine, &coarse, &offsets, 1);

            let xf = Array2::from_shape_fn((fine.len(), cin), |_| rng.gen_range(-1.0..1.0));
            let yf = Array2::from_shape_fn((coarse.len(), cout), |_| rng.gen_range(-1.0..1.0));

            let ax = forward_features(&xf, w.stacked(), cin, None, &kmap);
            let aty = transpose_features(&yf, w.stacked(), cin, &kmap);

            let lhs: f64 = (&ax * &yf).sum();
            let rhs: f64 = (&xf * &aty).sum();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-9, max_relative = 1e-6);
        }
    }

    #[test]
    fn transpose_populates_exactly_the_forward_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let fine = random_cloud(&mut rng, 30);
        let coarse = Arc::new(crate::sparse::stride_coordinates(&fine, 1, 2));
        let offsets = KernelOffsets::cubic(3).unwrap();
        let w = ConvWeights::new(Array2::ones((offsets.len(), 1)), None, 1).unwrap();
        let kmap = build_kernel_map(&fine, &coarse, &offsets, 1);

        // One-hot coarse row fed backwards.
        let target_out = 0usize;
        let mut y = Array2::<f64>::zeros((coarse.len(), 1));
        y[[target_out, 0]] = 1.0;
        let back = transpose_features(&y, w.stacked(), 1, &kmap);

        let mut expected_support = vec![false; fine.len()];
        for list in kmap.lists() {
            for &(a, b) in list {
                if b as usize == target_out {
                    expected_support[a as usize] = true;
                }
            }
        }
        for (row, &occupied) in expected_support.iter().enumerate() {
            assert_eq!(back[[row, 0]] != 0.0, occupied, "row {row}");
        }
    }

    #[test]
    fn conv_is_linear_in_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let coords = random_cloud(&mut rng, 50);
        let offsets = KernelOffsets::cubic(3).unwrap();
        let w = random_weights(&mut rng, offsets.len(), 2, 3, false);
        let kmap = build_kernel_map(&coords, &coords, &offsets, 1);

        let a = Array2::from_shape_fn((coords.len(), 2), |_| rng.gen_range(-1.0..1.0));
        let b = Array2::from_shape_fn((coords.len(), 2), |_| rng.gen_range(-1.0..1.0));
        let (alpha, beta) = (0.7, -1.3);

        let mixed = forward_features(
            &(a.mapv(|v| alpha * v) + b.mapv(|v| beta * v)),
            w.stacked(),
            2,
            None,
            &kmap,
        );
        let separate = forward_features(&a, w.stacked(), 2, None, &kmap).mapv(|v| alpha * v)
            + forward_features(&b, w.stacked(), 2, None, &kmap).mapv(|v| beta * v);
        for (x, y) in mixed.iter().zip(separate.iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-9, max_relative = 1e-6);
        }
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let coords = cloud(&[(0, 0, 0)]);
        let offsets = KernelOffsets::cubic(1).unwrap();
        let w = ConvWeights::identity(3);
        let x = SparseTensor::new(coords.clone(), array![[1.0, 2.0]], 1).unwrap();
        let kmap = build_kernel_map(&coords, &coords, &offsets, 1);
        assert!(matches!(
            sparse_conv_forward(&x, &w, &kmap, &coords, 1),
            Err(Error::ChannelMismatch { .. })
        ));
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Arc<CoordinateMap> {
        let mut seen = std::collections::HashSet::new();
        let mut coords = Vec::new();
        while coords.len() < n {
            let c = Coordinate::new(
                0,
                rng.gen_range(-5..5),
                rng.gen_range(-5..5),
                rng.gen_range(-5..5),
            );
            if seen.insert(c) {
                coords.push(c);
            }
        }
        Arc::new(CoordinateMap::from_coordinates(coords).unwrap())
    }
}

