use crate::autodiff::{ParamStore, Tape, ValueId};
use crate::error::{Error, Result};
use crate::nn::attention::{SInterAm, SIntraAm};
use crate::nn::layers::{init_rng, ConvLayer};
use crate::nn::restower::ResTower;
use crate::nn::{NetworkConfig, TracedTensor};
use crate::ops::BatchGroups;
use crate::scalar::Scalar;
use crate::sparse::{
    build_kernel_map, stride_coordinates, CoordinateMap, KernelMap, KernelOffsets, SparseTensor,
};
use std::sync::Arc;

/// Geometry of one pyramid level: its coordinates, the submanifold kernel
/// map on them, the size-1 identity map and the pooling groups.
#[derive(Debug, Clone)]
pub struct LevelGeometry {
    pub coords: Arc<CoordinateMap>,
    pub stride: i32,
    pub submanifold: Arc<KernelMap>,
    pub identity: Arc<KernelMap>,
    pub groups: Arc<BatchGroups>,
}

/// Downsampling link from level `i` to level `i + 1`: the full-kernel map
/// used by strided convolutions (and reused by the decoder's transposed
/// convolution) plus the size-1 map used by strided skip paths.
#[derive(Debug, Clone)]
pub struct LevelLink {
    pub kmap_full: Arc<KernelMap>,
    pub kmap_center: Arc<KernelMap>,
}

/// Coordinate maps and kernel maps captured while encoding; the decoder
/// restores exactly these coordinate sets level by level.
#[derive(Debug)]
pub struct CoordinateCache {
    levels: Vec<LevelGeometry>,
    links: Vec<LevelLink>,
}

impl CoordinateCache {
    /// Builds the whole pyramid eagerly: `level_count + 1` geometries
    /// (base plus one per downsampling) and the links between them.
    pub fn build(
        coords: Arc<CoordinateMap>,
        base_stride: i32,
        level_count: usize,
        kernel: &KernelOffsets,
    ) -> Self {
        let center = KernelOffsets::cubic(1).expect("size-1 kernel");
        let mut levels = Vec::with_capacity(level_count + 1);
        let mut links = Vec::with_capacity(level_count);

        let mut cur = coords;
        let mut stride = base_stride;
        for l in 0..=level_count {
            let submanifold = Arc::new(build_kernel_map(&cur, &cur, kernel, stride));
            let identity = Arc::new(build_kernel_map(&cur, &cur, &center, stride));
            let groups = Arc::new(BatchGroups::from_coords(&cur));
            levels.push(LevelGeometry {
                coords: cur.clone(),
                stride,
                submanifold,
                identity,
                groups,
            });
            if l == level_count {
                break;
            }
            let coarse = Arc::new(stride_coordinates(&cur, stride, 2));
            links.push(LevelLink {
                kmap_full: Arc::new(build_kernel_map(&cur, &coarse, kernel, stride)),
                kmap_center: Arc::new(build_kernel_map(&cur, &coarse, &center, stride)),
            });
            cur = coarse;
            stride *= 2;
        }
        Self { levels, links }
    }

    pub fn level(&self, l: usize) -> Result<&LevelGeometry> {
        self.levels.get(l).ok_or(Error::MissingCachedCoords(l))
    }

    pub fn link(&self, l: usize) -> Result<&LevelLink> {
        self.links.get(l).ok_or(Error::MissingCachedCoords(l))
    }

    pub fn level_count(&self) -> usize {
        self.links.len()
    }
}

struct EncoderLevel {
    sinter: Option<SInterAm>,
    sintra: Option<SIntraAm>,
    tower: ResTower,
}

struct DecoderLevel {
    up: ConvLayer,
    skip: ConvLayer,
    sinter: Option<SInterAm>,
    tower: ResTower,
}

/// Structure summary used by assertions and reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelStructure {
    pub sinter: bool,
    pub sintra: bool,
    pub tower_modules: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkStructure {
    pub encoder: Vec<LevelStructure>,
    pub decoder: Vec<LevelStructure>,
    pub damping: f64,
}

/// Everything the forward pass produces besides the logits.
pub struct ForwardResult {
    pub logits: TracedTensor,
    /// Feature value after the last decoder tower, before the head.
    pub last_decoder: ValueId,
    pub cache: CoordinateCache,
}

/// The encoder-decoder segmentation network.
pub struct S3Net {
    cfg: NetworkConfig,
    kernel: KernelOffsets,
    stem: ConvLayer,
    encoder: Vec<EncoderLevel>,
    decoder: Vec<DecoderLevel>,
    head: ConvLayer,
}

impl S3Net {
    /// Creates all parameters in `store` with a deterministic seed. The
    /// parameter naming is hierarchical (`enc0.tower.m1.conv2.w`, ...), and
    /// the creation order is fixed, so checkpoints are stable.
    pub fn new<T: Scalar>(
        cfg: NetworkConfig,
        store: &mut ParamStore<T>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = init_rng(seed);
        let kernel = KernelOffsets::cubic(cfg.kernel_size)?;
        let kv = kernel.len();
        let chs = cfg.level_channels();
        let levels = cfg.levels();

        let stem = ConvLayer::new(
            store,
            &mut rng,
            "stem",
            kv,
            cfg.input_channels,
            chs[0],
            true,
        );

        let mut encoder = Vec::with_capacity(levels);
        for i in 0..levels {
            let name = format!("enc{i}");
            let sinter = cfg.encoder_sinter_at(i).then(|| {
                SInterAm::new(
                    store,
                    &mut rng,
                    &format!("{name}.inter"),
                    chs[i],
                    cfg.reduction,
                    cfg.lambda,
                )
            });
            let sintra = cfg
                .encoder_sintra_at(i)
                .then(|| SIntraAm::new(store, &mut rng, &format!("{name}.intra"), chs[i], kv));
            let tower = ResTower::encoder(
                store,
                &mut rng,
                &format!("{name}.tower"),
                chs[i],
                chs[i + 1],
                kv,
            );
            encoder.push(EncoderLevel {
                sinter,
                sintra,
                tower,
            });
        }

        let mut decoder = Vec::with_capacity(levels);
        for i in 0..levels {
            let name = format!("dec{i}");
            // Transposed convolution from level i+1 back onto level i.
            let up = ConvLayer::new(
                store,
                &mut rng,
                &format!("{name}.up"),
                kv,
                chs[i],
                chs[i + 1],
                false,
            );
            let skip = ConvLayer::new(store, &mut rng, &format!("{name}.skip"), 1, chs[i], chs[i], true);
            let sinter = cfg.decoder_sinter_at(i).then(|| {
                SInterAm::new(
                    store,
                    &mut rng,
                    &format!("{name}.inter"),
                    chs[i],
                    cfg.reduction,
                    cfg.lambda,
                )
            });
            let tower = ResTower::decoder(store, &mut rng, &format!("{name}.tower"), chs[i], kv);
            decoder.push(DecoderLevel {
                up,
                skip,
                sinter,
                tower,
            });
        }

        let head = ConvLayer::new(store, &mut rng, "head", 1, chs[0], cfg.class_count, true);

        Ok(Self {
            cfg,
            kernel,
            stem,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn structure(&self) -> NetworkStructure {
        NetworkStructure {
            encoder: self
                .encoder
                .iter()
                .map(|l| LevelStructure {
                    sinter: l.sinter.is_some(),
                    sintra: l.sintra.is_some(),
                    tower_modules: l.tower.len(),
                })
                .collect(),
            decoder: self
                .decoder
                .iter()
                .map(|l| LevelStructure {
                    sinter: l.sinter.is_some(),
                    sintra: false,
                    tower_modules: l.tower.len(),
                })
                .collect(),
            damping: self.cfg.lambda,
        }
    }

    /// Runs the network on one (possibly batched) input tensor, recording
    /// onto `tape`. The logits live on the input's coordinate set.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        input: &SparseTensor<T>,
        training: bool,
    ) -> Result<ForwardResult> {
        if input.channels() != self.cfg.input_channels {
            return Err(Error::ChannelMismatch {
                context: "network input",
                expected: self.cfg.input_channels,
                got: input.channels(),
            });
        }
        let levels = self.cfg.levels();
        let cache = CoordinateCache::build(
            input.coords().clone(),
            input.stride(),
            levels,
            &self.kernel,
        );

        let x = tape.input(input.features().clone());
        let mut cur = TracedTensor {
            coords: cache.level(0)?.coords.clone(),
            stride: cache.level(0)?.stride,
            value: self
                .stem
                .forward(tape, store, x, &cache.level(0)?.submanifold)?,
        };

        let mut skips: Vec<ValueId> = Vec::with_capacity(levels);
        for (i, level) in self.encoder.iter().enumerate() {
            let geom = cache.level(i)?;
            if let Some(sinter) = &level.sinter {
                cur = sinter.forward(tape, store, &cur, geom)?;
            }
            if let Some(sintra) = &level.sintra {
                cur = sintra.forward(tape, store, &cur, geom)?;
            }
            skips.push(cur.value);
            let coarse = cache.level(i + 1)?;
            let value =
                level
                    .tower
                    .forward_encoder(tape, store, cur.value, cache.link(i)?, coarse, training)?;
            cur = TracedTensor {
                coords: coarse.coords.clone(),
                stride: coarse.stride,
                value,
            };
        }

        for i in (0..levels).rev() {
            let geom = cache.level(i)?;
            let level = &self.decoder[i];
            let up = level
                .up
                .transpose_forward(tape, store, cur.value, &cache.link(i)?.kmap_full)?;
            let skip = level.skip.forward(tape, store, skips[i], &geom.identity)?;
            let fused = tape.add(up, skip)?;
            cur = TracedTensor {
                coords: geom.coords.clone(),
                stride: geom.stride,
                value: fused,
            };
            if let Some(sinter) = &level.sinter {
                cur = sinter.forward(tape, store, &cur, geom)?;
            }
            let value = level
                .tower
                .forward_decoder(tape, store, cur.value, geom, training)?;
            cur = TracedTensor {
                value,
                ..cur.clone()
            };
        }

        let last_decoder = cur.value;
        let base = cache.level(0)?;
        let logits = self
            .head
            .forward(tape, store, last_decoder, &base.identity)?;
        Ok(ForwardResult {
            logits: TracedTensor {
                coords: base.coords.clone(),
                stride: base.stride,
                value: logits,
            },
            last_decoder,
            cache,
        })
    }
}

/// Argmax per row with ties broken toward the lower class index.
pub fn argmax_rows<T: Scalar>(logits: &ndarray::Array2<T>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_v = row[0];
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}
