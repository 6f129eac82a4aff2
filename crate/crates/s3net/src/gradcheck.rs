//! Finite-difference verification of every differentiable building block.
//!
//! Each check builds a small fixture whose inputs are parameters, runs one
//! tape backward for the analytic gradients, then compares sampled
//! components against central differences of the re-evaluated scalar loss.
//! Everything runs at 64-bit precision with step 1e-5 and relative
//! tolerance 1e-4 (absolute below magnitude one).

use crate::autodiff::{ParamStore, Tape, ValueId};
use crate::error::Result;
use crate::loss::{mlga_weights, VoxelLabelGrid};
use crate::nn::layers::random_features;
use crate::nn::{
    CoordinateCache, NetworkConfig, ResModule, S3Net, SInterAm, SIntraAm, TracedTensor,
};
use crate::sparse::{Coordinate, CoordinateMap, KernelOffsets, SparseTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Outcome of one fixture.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub checked: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: max_rel_err={:.3e} over {} components (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.checked,
            self.tolerance
        )
    }
}

type ForwardFn = dyn Fn(&mut Tape<f64>, &mut ParamStore<f64>) -> Result<ValueId>;

/// Compares analytic gradients against central differences on up to
/// `samples` components per parameter (all components when small).
fn fd_check(
    name: &'static str,
    store: &ParamStore<f64>,
    samples: usize,
    seed: u64,
    forward: &ForwardFn,
) -> CheckResult {
    let mut ad_store = store.clone();
    let mut tape = Tape::new();
    let loss = forward(&mut tape, &mut ad_store).expect("fixture forward");
    ad_store.zero_grads();
    tape.backward(loss, &mut ad_store).expect("fixture backward");

    let eval = |s: &ParamStore<f64>| -> f64 {
        let mut sc = s.clone();
        let mut t = Tape::new();
        let l = forward(&mut t, &mut sc).expect("fixture forward");
        t.scalar(l)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for pid in store.ids() {
        if !store.get(pid).trainable {
            continue;
        }
        let len = store.value(pid).len();
        let cols = store.value(pid).ncols();
        let flats: Vec<usize> = if len <= samples {
            (0..len).collect()
        } else {
            let mut set = std::collections::BTreeSet::new();
            while set.len() < samples {
                set.insert(rng.gen_range(0..len));
            }
            set.into_iter().collect()
        };
        for flat in flats {
            let (r, c) = (flat / cols, flat % cols);
            let mut plus = store.clone();
            plus.get_mut(pid).value[[r, c]] += FD_STEP;
            let mut minus = store.clone();
            minus.get_mut(pid).value[[r, c]] -= FD_STEP;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let ad = ad_store.grad(pid)[[r, c]];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    CheckResult {
        name,
        max_rel_err: max_rel,
        tolerance: TOLERANCE,
        checked,
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, span: i32) -> Arc<CoordinateMap> {
    let mut seen = std::collections::HashSet::new();
    let mut coords = Vec::new();
    while coords.len() < n {
        let c = Coordinate::new(
            0,
            rng.gen_range(-span..span),
            rng.gen_range(-span..span),
            rng.gen_range(-span..span),
        );
        if seen.insert(c) {
            coords.push(c);
        }
    }
    Arc::new(CoordinateMap::from_coordinates(coords).unwrap())
}

fn check_sparse_conv(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = random_cloud(&mut rng, 25, 4);
    let kernel = KernelOffsets::cubic(3).unwrap();
    let cache = CoordinateCache::build(coords.clone(), 1, 0, &kernel);
    let kmap = cache.level(0).unwrap().submanifold.clone();

    let mut store = ParamStore::<f64>::new();
    let x = store.add("x", random_features(&mut rng, coords.len(), 3), true);
    let w = store.add("w", random_features(&mut rng, kernel.len() * 3, 4), true);
    let b = store.add("b", random_features(&mut rng, 1, 4), true);

    fd_check(
        "sparse_conv",
        &store,
        64,
        seed,
        &move |tape: &mut Tape<f64>, s: &mut ParamStore<f64>| {
            let xv = tape.param(s, x);
            let wv = tape.param(s, w);
            let bv = tape.param(s, b);
            let y = tape.sparse_conv(xv, wv, Some(bv), kmap.clone())?;
            let sq = tape.mul(y, y)?;
            Ok(tape.sum_all(sq))
        },
    )
}

fn check_conv_transpose(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let fine = random_cloud(&mut rng, 30, 4);
    let kernel = KernelOffsets::cubic(3).unwrap();
    let cache = CoordinateCache::build(fine.clone(), 1, 1, &kernel);
    let kmap = cache.link(0).unwrap().kmap_full.clone();
    let coarse_rows = cache.level(1).unwrap().coords.len();

    let mut store = ParamStore::<f64>::new();
    let x = store.add("x", random_features(&mut rng, coarse_rows, 4), true);
    let w = store.add("w", random_features(&mut rng, kernel.len() * 2, 4), true);

    fd_check(
        "conv_transpose",
        &store,
        64,
        seed,
        &move |tape: &mut Tape<f64>, s: &mut ParamStore<f64>| {
            let xv = tape.param(s, x);
            let wv = tape.param(s, w);
            let y = tape.conv_transpose(xv, wv, 2, kmap.clone())?;
            let sq = tape.mul(y, y)?;
            Ok(tape.sum_all(sq))
        },
    )
}

fn check_batch_norm(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let mut store = ParamStore::<f64>::new();
    let x = store.add("x", random_features(&mut rng, 14, 4), true);
    let gamma = store.add("gamma", random_features(&mut rng, 1, 4), true);
    let beta = store.add("beta", random_features(&mut rng, 1, 4), true);

    fd_check(
        "batch_norm",
        &store,
        64,
        seed,
        &move |tape: &mut Tape<f64>, s: &mut ParamStore<f64>| {
            let xv = tape.param(s, x);
            let gv = tape.param(s, gamma);
            let bv = tape.param(s, beta);
            let mut stats = crate::ops::BnStats::fresh(4);
            let y = tape.batch_norm(xv, gv, bv, &mut stats, 0.1, 1e-5, true);
            let sq = tape.mul(y, y)?;
            Ok(tape.sum_all(sq))
        },
    )
}

fn check_sintra(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    let coords = random_cloud(&mut rng, 20, 3);
    let kernel = KernelOffsets::cubic(3).unwrap();
    let cache = Arc::new(CoordinateCache::build(coords.clone(), 1, 0, &kernel));

    let mut store = ParamStore::<f64>::new();
    let x = store.add("x", random_features(&mut rng, coords.len(), 4), true);
    let module = SIntraAm::new(&mut store, &mut rng, "intra", 4, kernel.len());

    fd_check(
        "sintra_am",
        &store,
        48,
        seed,
        &move |tape: &mut Tape<f64>, s: &mut ParamStore<f64>| {
            let xv = tape.param(s, x);
            let traced = TracedTensor {
                coords: coords.clone(),
                stride: 1,
                value: xv,
            };
            let y = module.forward(tape, s, &traced, cache.level(0)?)?;
            let sq = tape.mul(y.value, y.value)?;
            Ok(tape.sum_all(sq))
        },
    )
}

fn check_sinter(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 4);
    let coords = random_cloud(&mut rng, 18, 3);
    let kernel = KernelOffsets::cubic(3).unwrap();
    let cache = Arc::new(CoordinateCache::build(coords.clone(), 1, 0, &kernel));

    let mut store = ParamStore::<f64>::new();
    let x = store.add("x", random_features(&mut rng, coords.len(), 4), true);
    let module = SInterAm::new(&mut store, &mut rng, "inter", 4, 2, 0.35);

    fd_check(
        "sinter_am",
        &store,
        48,
        seed,
        &move |tape: &mut Tape<f64>, s: &mut ParamStore<f64>| {
            let xv = tape.param(s, x);
            let traced = TracedTensor {
                coords: coords.clone(),
                stride: 1,
                value: xv,
            };
            let y = module.forward(tape, s, &traced, cache.level(0)?)?;
            let sq = tape.mul(y.value, y.value)?;
            Ok(tape.sum_all(sq))
        },
    )
}

fn check_res_module(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 5);
    let coords = random_cloud(&mut rng, 26, 4);
    let kernel = KernelOffsets::cubic(3).unwrap();
    let cache = Arc::new(CoordinateCache::build(coords.clone(), 1, 1, &kernel));

    let mut store = ParamStore::<f64>::new();
    let x = store.add("x", random_features(&mut rng, coords.len(), 3), true);
    let module = ResModule::new(&mut store, &mut rng, "res", 3, 4, kernel.len());

    fd_check(
        "res_module",
        &store,
        48,
        seed,
        &move |tape: &mut Tape<f64>, s: &mut ParamStore<f64>| {
            let xv = tape.param(s, x);
            let link = cache.link(0)?;
            let coarse = cache.level(1)?;
            let y = module.forward(
                tape,
                s,
                xv,
                &link.kmap_full,
                &coarse.submanifold,
                &link.kmap_center,
                true,
            )?;
            let sq = tape.mul(y, y)?;
            Ok(tape.sum_all(sq))
        },
    )
}

fn check_wce(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 6);
    let mut store = ParamStore::<f64>::new();
    let logits = store.add("logits", random_features(&mut rng, 12, 5), true);
    let labels: Arc<Vec<Option<usize>>> = Arc::new(
        (0..12)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    None
                } else {
                    Some(rng.gen_range(0..5))
                }
            })
            .collect(),
    );
    let alpha: Vec<f64> = (0..5).map(|_| rng.gen_range(0.5..3.0)).collect();

    fd_check(
        "wce_loss",
        &store,
        64,
        seed,
        &move |tape: &mut Tape<f64>, s: &mut ParamStore<f64>| {
            let lv = tape.param(s, logits);
            tape.wce_loss(lv, labels.clone(), &alpha)
        },
    )
}

fn check_geo(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    // A labeled 4x4x2 slab provides mixed anisotropy weights.
    let mut coords = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..2 {
                coords.push(Coordinate::new(0, i, j, k));
            }
        }
    }
    let coords = Arc::new(CoordinateMap::from_coordinates(coords).unwrap());
    let labels: Vec<Option<usize>> = (0..coords.len())
        .map(|_| {
            if rng.gen_bool(0.1) {
                None
            } else {
                Some(rng.gen_range(0..3))
            }
        })
        .collect();
    let grid = VoxelLabelGrid::new(&coords, &labels).unwrap();
    let weights = mlga_weights(&grid);
    let labels = Arc::new(labels);

    let mut store = ParamStore::<f64>::new();
    let logits = store.add("logits", random_features(&mut rng, coords.len(), 3), true);

    fd_check(
        "geo_loss",
        &store,
        64,
        seed,
        &move |tape: &mut Tape<f64>, s: &mut ParamStore<f64>| {
            let lv = tape.param(s, logits);
            tape.geo_loss(lv, labels.clone(), &weights)
        },
    )
}

fn check_full_network(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 8);
    let cfg = NetworkConfig {
        input_channels: 3,
        class_count: 3,
        stem_channels: 4,
        encoder_channels: vec![4, 4, 4, 4],
        kernel_size: 3,
        lambda: 0.35,
        reduction: 4,
        ..Default::default()
    };
    let coords = random_cloud(&mut rng, 90, 6);
    let feats = random_features::<f64>(&mut rng, coords.len(), 3);
    let input = SparseTensor::new(coords.clone(), feats, 1).unwrap();

    let labels: Arc<Vec<Option<usize>>> = Arc::new(
        (0..coords.len())
            .map(|_| {
                if rng.gen_bool(0.1) {
                    None
                } else {
                    Some(rng.gen_range(0..3))
                }
            })
            .collect(),
    );
    let grid = VoxelLabelGrid::new(&coords, &labels).unwrap();
    let weights = mlga_weights(&grid);
    let alpha = vec![1.2, 0.8, 1.5];

    let mut store = ParamStore::<f64>::new();
    let net = S3Net::new(cfg, &mut store, seed).unwrap();

    fd_check(
        "full_network",
        &store,
        3,
        seed,
        &move |tape: &mut Tape<f64>, s: &mut ParamStore<f64>| {
            let out = net.forward(tape, s, &input, true)?;
            let wce = tape.wce_loss(out.logits.value, labels.clone(), &alpha)?;
            let geo = tape.geo_loss(out.logits.value, labels.clone(), &weights)?;
            let wce_s = tape.scale(wce, 0.75);
            let geo_s = tape.scale(geo, 0.25);
            tape.add(wce_s, geo_s)
        },
    )
}

/// Runs every fixture; the CLI surfaces the results and exit code.
pub fn run_full_suite(seed: u64) -> Vec<CheckResult> {
    vec![
        check_sparse_conv(seed),
        check_conv_transpose(seed),
        check_batch_norm(seed),
        check_sintra(seed),
        check_sinter(seed),
        check_res_module(seed),
        check_wce(seed),
        check_geo(seed),
        check_full_network(seed),
    ]
}
