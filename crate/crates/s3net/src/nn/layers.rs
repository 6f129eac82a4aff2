use crate::autodiff::{ParamId, ParamStore, Tape, ValueId};
use crate::error::Result;
use crate::ops::BnStats;
use crate::scalar::Scalar;
use crate::sparse::KernelMap;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::sync::Arc;

pub(crate) fn he_normal<T: Scalar>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
) -> Array2<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    Array2::from_shape_fn((rows, cols), |_| T::from_f64(dist.sample(rng)))
}

/// A sparse convolution layer: stacked per-offset weights plus optional
/// bias, executed against a prebuilt kernel map.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub w: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_volume: usize,
}

impl ConvLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        kernel_volume: usize,
        in_channels: usize,
        out_channels: usize,
        with_bias: bool,
    ) -> Self {
        let fan_in = kernel_volume * in_channels;
        let w = store.add(
            format!("{name}.w"),
            he_normal(rng, kernel_volume * in_channels, out_channels, fan_in),
            true,
        );
        let bias = with_bias.then(|| {
            store.add(format!("{name}.b"), Array2::<T>::zeros((1, out_channels)), true)
        });
        Self {
            w,
            bias,
            in_channels,
            out_channels,
            kernel_volume,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: ValueId,
        kmap: &Arc<KernelMap>,
    ) -> Result<ValueId> {
        let w = tape.param(store, self.w);
        let bias = self.bias.map(|b| tape.param(store, b));
        tape.sparse_conv(x, w, bias, kmap.clone())
    }

    /// Adjoint application onto the kernel map's input side; used by the
    /// decoder to restore cached coordinates. Bias-free by construction.
    pub fn transpose_forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: ValueId,
        kmap: &Arc<KernelMap>,
    ) -> Result<ValueId> {
        debug_assert!(self.bias.is_none(), "transpose path carries no bias");
        let w = tape.param(store, self.w);
        tape.conv_transpose(x, w, self.in_channels, kmap.clone())
    }
}

/// Row-wise dense affine layer.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub w: ParamId,
    pub bias: ParamId,
}

impl LinearLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            he_normal(rng, in_features, out_features, in_features),
            true,
        );
        let bias = store.add(format!("{name}.b"), Array2::<T>::zeros((1, out_features)), true);
        Self { w, bias }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: ValueId,
    ) -> Result<ValueId> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, Some(b))
    }
}

/// Batch normalization layer; gamma/beta are trainable, the running
/// statistics are tracked parameters updated in training mode.
#[derive(Debug, Clone)]
pub struct BnLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BnLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Array2::<T>::ones((1, channels)), true);
        let beta = store.add(format!("{name}.beta"), Array2::<T>::zeros((1, channels)), true);
        let running_mean = store.add(
            format!("{name}.running_mean"),
            Array2::<T>::zeros((1, channels)),
            false,
        );
        let running_var = store.add(
            format!("{name}.running_var"),
            Array2::<T>::ones((1, channels)),
            false,
        );
        Self {
            gamma,
            beta,
            running_mean,
            running_var,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: ValueId,
        training: bool,
    ) -> Result<ValueId> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let mut stats = BnStats {
            mean: store.value(self.running_mean).row(0).to_owned(),
            var: store.value(self.running_var).row(0).to_owned(),
        };
        let y = tape.batch_norm(x, gamma, beta, &mut stats, self.momentum, self.eps, training);
        if training {
            store.set_value(self.running_mean, row_matrix(stats.mean))?;
            store.set_value(self.running_var, row_matrix(stats.var))?;
        }
        Ok(y)
    }
}

fn row_matrix<T: Scalar>(v: Array1<T>) -> Array2<T> {
    let n = v.len();
    v.into_shape_with_order((1, n)).unwrap()
}

/// Deterministic initializer stream for network construction.
pub(crate) fn init_rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform noise helper for test fixtures.
pub fn random_features<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| T::from_f64(rng.gen_range(-1.0..1.0)))
}
