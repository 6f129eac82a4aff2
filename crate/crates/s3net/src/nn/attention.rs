use crate::autodiff::{ParamStore, Tape};
use crate::error::Result;
use crate::nn::layers::{ConvLayer, LinearLayer};
use crate::nn::network::LevelGeometry;
use crate::nn::TracedTensor;
use crate::scalar::Scalar;
use rand_chacha::ChaCha8Rng;

/// Intra-channel (spatial) attention: a two-convolution sigmoid mask
/// multiplied element-wise into the tensor, stabilized by a residual add.
/// Coordinates pass through untouched.
#[derive(Debug, Clone)]
pub struct SIntraAm {
    conv_a: ConvLayer,
    conv_b: ConvLayer,
}

impl SIntraAm {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        kernel_volume: usize,
    ) -> Self {
        Self {
            conv_a: ConvLayer::new(
                store,
                rng,
                &format!("{name}.conv_a"),
                kernel_volume,
                channels,
                channels,
                true,
            ),
            conv_b: ConvLayer::new(
                store,
                rng,
                &format!("{name}.conv_b"),
                kernel_volume,
                channels,
                channels,
                true,
            ),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: &TracedTensor,
        geom: &LevelGeometry,
    ) -> Result<TracedTensor> {
        let h = self.conv_a.forward(tape, store, x.value, &geom.submanifold)?;
        let h = tape.relu(h);
        let h = self.conv_b.forward(tape, store, h, &geom.submanifold)?;
        let mask = tape.sigmoid(h);
        let masked = tape.mul(x.value, mask)?;
        let y = tape.add(x.value, masked)?;
        Ok(TracedTensor {
            coords: x.coords.clone(),
            stride: x.stride,
            value: y,
        })
    }
}

/// Inter-channel attention: squeeze (global average pool), a bottleneck
/// excitation pair, per-batch channel re-scaling, then a global damping
/// factor. Coordinates pass through untouched.
#[derive(Debug, Clone)]
pub struct SInterAm {
    fc1: LinearLayer,
    fc2: LinearLayer,
    lambda: f64,
}

impl SInterAm {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        reduction: usize,
        lambda: f64,
    ) -> Self {
        let squeezed = channels / reduction;
        Self {
            fc1: LinearLayer::new(store, rng, &format!("{name}.fc1"), channels, squeezed),
            fc2: LinearLayer::new(store, rng, &format!("{name}.fc2"), squeezed, channels),
            lambda,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: &TracedTensor,
        geom: &LevelGeometry,
    ) -> Result<TracedTensor> {
        let pooled = tape.global_avg_pool(x.value, geom.groups.clone());
        let h = self.fc1.forward(tape, store, pooled)?;
        let h = tape.relu(h);
        let h = self.fc2.forward(tape, store, h)?;
        let scales = tape.sigmoid(h);
        let scaled = tape.broadcast_mul(x.value, scales, geom.groups.clone())?;
        let y = tape.scale(scaled, self.lambda);
        Ok(TracedTensor {
            coords: x.coords.clone(),
            stride: x.stride,
            value: y,
        })
    }
}
