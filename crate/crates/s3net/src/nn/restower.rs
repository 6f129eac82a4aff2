use crate::autodiff::{ParamStore, Tape, ValueId};
use crate::error::Result;
use crate::nn::layers::{BnLayer, ConvLayer};
use crate::nn::network::{LevelGeometry, LevelLink};
use crate::scalar::Scalar;
use crate::sparse::KernelMap;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// One residual module: conv-relu-bn twice on the main path, a size-1
/// convolution on the skip path to align coordinates and channels, summed
/// on identical output coordinates. Only the first convolution (and the
/// skip) may change the coordinate set.
#[derive(Debug, Clone)]
pub struct ResModule {
    conv1: ConvLayer,
    bn1: BnLayer,
    conv2: ConvLayer,
    bn2: BnLayer,
    skip: ConvLayer,
}

impl ResModule {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_volume: usize,
    ) -> Self {
        Self {
            conv1: ConvLayer::new(
                store,
                rng,
                &format!("{name}.conv1"),
                kernel_volume,
                in_channels,
                out_channels,
                true,
            ),
            bn1: BnLayer::new(store, &format!("{name}.bn1"), out_channels),
            conv2: ConvLayer::new(
                store,
                rng,
                &format!("{name}.conv2"),
                kernel_volume,
                out_channels,
                out_channels,
                true,
            ),
            bn2: BnLayer::new(store, &format!("{name}.bn2"), out_channels),
            skip: ConvLayer::new(
                store,
                rng,
                &format!("{name}.skip"),
                1,
                in_channels,
                out_channels,
                true,
            ),
        }
    }

    /// `k_first` carries the input onto the output coordinates, `k_second`
    /// is the submanifold map on the output coordinates, `k_skip` the
    /// size-1 map from input to output coordinates.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: ValueId,
        k_first: &Arc<KernelMap>,
        k_second: &Arc<KernelMap>,
        k_skip: &Arc<KernelMap>,
        training: bool,
    ) -> Result<ValueId> {
        let h = self.conv1.forward(tape, store, x, k_first)?;
        let h = tape.relu(h);
        let h = self.bn1.forward(tape, store, h, training)?;
        let h = self.conv2.forward(tape, store, h, k_second)?;
        let h = tape.relu(h);
        let h = self.bn2.forward(tape, store, h, training)?;
        let s = self.skip.forward(tape, store, x, k_skip)?;
        tape.add(h, s)
    }
}

/// A stack of residual modules; only the first may stride. Encoder towers
/// hold three modules and downsample, decoder towers hold two and keep the
/// coordinate set.
#[derive(Debug, Clone)]
pub struct ResTower {
    modules: Vec<ResModule>,
}

impl ResTower {
    pub fn encoder<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_volume: usize,
    ) -> Self {
        let modules = (0..3)
            .map(|i| {
                let cin = if i == 0 { in_channels } else { out_channels };
                ResModule::new(
                    store,
                    rng,
                    &format!("{name}.m{i}"),
                    cin,
                    out_channels,
                    kernel_volume,
                )
            })
            .collect();
        Self { modules }
    }

    pub fn decoder<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        kernel_volume: usize,
    ) -> Self {
        let modules = (0..2)
            .map(|i| {
                ResModule::new(
                    store,
                    rng,
                    &format!("{name}.m{i}"),
                    channels,
                    channels,
                    kernel_volume,
                )
            })
            .collect();
        Self { modules }
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    /// Encoder pass: the first module strides from `fine` to `coarse`
    /// via the downsampling link, the rest stay submanifold on `coarse`.
    pub fn forward_encoder<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: ValueId,
        link: &LevelLink,
        coarse: &LevelGeometry,
        training: bool,
    ) -> Result<ValueId> {
        let mut cur = self.modules[0].forward(
            tape,
            store,
            x,
            &link.kmap_full,
            &coarse.submanifold,
            &link.kmap_center,
            training,
        )?;
        for module in &self.modules[1..] {
            cur = module.forward(
                tape,
                store,
                cur,
                &coarse.submanifold,
                &coarse.submanifold,
                &coarse.identity,
                training,
            )?;
        }
        Ok(cur)
    }

    /// Decoder pass: every module is submanifold on the level's coordinates.
    pub fn forward_decoder<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: ValueId,
        geom: &LevelGeometry,
        training: bool,
    ) -> Result<ValueId> {
        let mut cur = x;
        for module in &self.modules {
            cur = module.forward(
                tape,
                store,
                cur,
                &geom.submanifold,
                &geom.submanifold,
                &geom.identity,
                training,
            )?;
        }
        Ok(cur)
    }
}
