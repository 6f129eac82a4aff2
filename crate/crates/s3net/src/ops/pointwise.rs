use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::SparseTensor;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use std::sync::Arc;

pub fn relu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(grad: &Array2<T>, x: &Array2<T>) -> Array2<T> {
    let mut g = grad.clone();
    g.zip_mut_with(x, |gv, &xv| {
        if xv <= T::zero() {
            *gv = T::zero();
        }
    });
    g
}

pub fn sigmoid<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| T::one() / (T::one() + (-v).exp()))
}

/// Backward from the saved output `y = sigmoid(x)`.
pub fn sigmoid_backward<T: Scalar>(grad: &Array2<T>, y: &Array2<T>) -> Array2<T> {
    let mut g = grad.clone();
    g.zip_mut_with(y, |gv, &yv| *gv = *gv * yv * (T::one() - yv));
    g
}

/// Row-wise affine map `y = x W + b`.
pub fn linear<T: Scalar>(
    x: &Array2<T>,
    w: &Array2<T>,
    bias: Option<ArrayView1<'_, T>>,
) -> Result<Array2<T>> {
    if x.ncols() != w.nrows() {
        return Err(Error::ChannelMismatch {
            context: "linear",
            expected: w.nrows(),
            got: x.ncols(),
        });
    }
    let mut y = x.dot(w);
    if let Some(b) = bias {
        y += &b.broadcast(y.raw_dim()).unwrap();
    }
    Ok(y)
}

pub fn linear_backward<T: Scalar>(
    grad: &Array2<T>,
    x: &Array2<T>,
    w: &Array2<T>,
) -> (Array2<T>, Array2<T>, Array1<T>) {
    let gx = grad.dot(&w.t());
    let gw = x.t().dot(grad);
    let gb = grad.sum_axis(Axis(0));
    (gx, gw, gb)
}

/// Per-channel running statistics carried across training steps.
#[derive(Debug, Clone)]
pub struct BnStats<T: Scalar> {
    pub mean: Array1<T>,
    pub var: Array1<T>,
}

impl<T: Scalar> BnStats<T> {
    pub fn fresh(channels: usize) -> Self {
        Self {
            mean: Array1::zeros(channels),
            var: Array1::ones(channels),
        }
    }
}

/// Saved forward context needed by the training-mode backward pass.
#[derive(Debug, Clone)]
pub struct BnCtx<T: Scalar> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
}

/// Training-mode batch normalization: normalizes each channel over all rows
/// of all batches, applies the affine pair and folds the batch statistics
/// into the running estimates with the given momentum.
pub fn batch_norm_train<T: Scalar>(
    x: &Array2<T>,
    gamma: ArrayView1<'_, T>,
    beta: ArrayView1<'_, T>,
    running: &mut BnStats<T>,
    momentum: T,
    eps: T,
) -> (Array2<T>, BnCtx<T>) {
    let n = T::from_f64(x.nrows() as f64);
    let mean = x.sum_axis(Axis(0)) / n;
    let mut centered = x.clone();
    centered -= &mean.broadcast(x.raw_dim()).unwrap();
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());

    let mut xhat = centered;
    xhat *= &inv_std.broadcast(x.raw_dim()).unwrap();

    let mut y = xhat.clone();
    y *= &gamma.broadcast(x.raw_dim()).unwrap();
    y += &beta.broadcast(x.raw_dim()).unwrap();

    let one_minus = T::one() - momentum;
    running.mean = running.mean.mapv(|m| m * one_minus) + &(mean.mapv(|m| m * momentum));
    running.var = running.var.mapv(|v| v * one_minus) + &(var.mapv(|v| v * momentum));

    (y, BnCtx { xhat, inv_std })
}

/// Gradient of [`batch_norm_train`] with respect to input, gamma and beta.
pub fn batch_norm_train_backward<T: Scalar>(
    grad: &Array2<T>,
    gamma: ArrayView1<'_, T>,
    ctx: &BnCtx<T>,
) -> (Array2<T>, Array1<T>, Array1<T>) {
    let n = T::from_f64(grad.nrows() as f64);
    let g_beta = grad.sum_axis(Axis(0));
    let g_gamma = (grad * &ctx.xhat).sum_axis(Axis(0));

    let mut g_xhat = grad.clone();
    g_xhat *= &gamma.broadcast(grad.raw_dim()).unwrap();

    // dx = inv_std/N * (N*g_xhat - sum(g_xhat) - xhat * sum(g_xhat * xhat))
    let sum_g = g_xhat.sum_axis(Axis(0));
    let sum_gx = (&g_xhat * &ctx.xhat).sum_axis(Axis(0));
    let mut gx = g_xhat.mapv(|v| v * n);
    gx -= &sum_g.broadcast(grad.raw_dim()).unwrap();
    gx -= &(&ctx.xhat * &sum_gx.broadcast(grad.raw_dim()).unwrap());
    gx *= &ctx.inv_std.mapv(|v| v / n).broadcast(grad.raw_dim()).unwrap();

    (gx, g_gamma, g_beta)
}

/// Evaluation-mode batch normalization using the running statistics.
/// Returns the output and the inverse standard deviation used, which the
/// backward pass reuses.
pub fn batch_norm_eval<T: Scalar>(
    x: &Array2<T>,
    gamma: ArrayView1<'_, T>,
    beta: ArrayView1<'_, T>,
    running: &BnStats<T>,
    eps: T,
) -> (Array2<T>, Array1<T>) {
    let inv_std = running.var.mapv(|v| T::one() / (v + eps).sqrt());
    let mut y = x.clone();
    y -= &running.mean.broadcast(x.raw_dim()).unwrap();
    y *= &inv_std.broadcast(x.raw_dim()).unwrap();
    y *= &gamma.broadcast(x.raw_dim()).unwrap();
    y += &beta.broadcast(x.raw_dim()).unwrap();
    (y, inv_std)
}

/// Element-wise sum of two tensors on identical coordinate maps.
pub fn add<T: Scalar>(x: &SparseTensor<T>, y: &SparseTensor<T>) -> Result<SparseTensor<T>> {
    require_same_coords(x, y, "add")?;
    Ok(SparseTensor::from_parts(
        x.coords().clone(),
        x.features() + y.features(),
        x.stride(),
    ))
}

/// Element-wise product of two tensors on identical coordinate maps.
pub fn mul<T: Scalar>(x: &SparseTensor<T>, y: &SparseTensor<T>) -> Result<SparseTensor<T>> {
    require_same_coords(x, y, "mul")?;
    Ok(SparseTensor::from_parts(
        x.coords().clone(),
        x.features() * y.features(),
        x.stride(),
    ))
}

pub(crate) fn require_same_coords<T: Scalar>(
    x: &SparseTensor<T>,
    y: &SparseTensor<T>,
    op: &'static str,
) -> Result<()> {
    if !Arc::ptr_eq(x.coords(), y.coords()) && x.coords() != y.coords() {
        return Err(Error::CoordinateMismatch { op });
    }
    if x.channels() != y.channels() {
        return Err(Error::ChannelMismatch {
            context: op,
            expected: x.channels(),
            got: y.channels(),
        });
    }
    Ok(())
}
