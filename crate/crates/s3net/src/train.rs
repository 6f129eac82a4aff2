//! End-to-end drivers: the training loop with structured log records,
//! checkpoint-backed inference, prediction evaluation and attention export.

use crate::autodiff::{adam_step, checkpoint, exp_lr, ParamStore, Tape};
use crate::config::RunConfig;
use crate::data::pipeline::{merge_batch, voxel_sample, VoxelSample};
use crate::data::{read_labels, read_scan, write_labels, FrequencyManifest, LabelRemap};
use crate::error::{Error, Result};
use crate::eval::{export_attention, ConfusionMatrix};
use crate::loss::{class_weights, mlga_weights, VoxelLabelGrid};
use crate::nn::network::argmax_rows;
use crate::nn::S3Net;
use crate::scalar::Scalar;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// One scan's file pair.
#[derive(Debug, Clone)]
pub struct ScanEntry {
    pub scan: PathBuf,
    pub labels: Option<PathBuf>,
    pub sequence: String,
    pub name: String,
}

/// Lists `sequences/<seq>/velodyne/*.bin` in name order, pairing each scan
/// with its label file when present.
pub fn discover_split(root: &Path, sequences: &[String]) -> Result<Vec<ScanEntry>> {
    let mut entries = Vec::new();
    for seq in sequences {
        let velo = root.join("sequences").join(seq).join("velodyne");
        if !velo.is_dir() {
            return Err(Error::Invalid(format!(
                "missing sequence directory {}",
                velo.display()
            )));
        }
        let mut scans: Vec<PathBuf> = std::fs::read_dir(&velo)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "bin"))
            .collect();
        scans.sort();
        for scan in scans {
            let name = scan
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let label_path = root
                .join("sequences")
                .join(seq)
                .join("labels")
                .join(format!("{name}.label"));
            entries.push(ScanEntry {
                scan,
                labels: label_path.exists().then_some(label_path),
                sequence: seq.clone(),
                name,
            });
        }
    }
    Ok(entries)
}

fn load_sample<T: Scalar>(
    cfg: &RunConfig,
    remap: &LabelRemap,
    entry: &ScanEntry,
    batch: u32,
) -> Result<VoxelSample<T>> {
    let scan = read_scan(&entry.scan)?;
    let labels = match &entry.labels {
        Some(path) => {
            let raw = read_labels(path, Some(scan.len()))?;
            Some(remap.remap_all(&raw)?)
        }
        None => None,
    };
    voxel_sample(
        &scan,
        labels.as_deref(),
        remap.class_count(),
        cfg.voxel_size.0,
        &cfg.range,
        batch,
    )
}

/// Loads the frequency manifest, computing and saving it over the training
/// split when absent.
pub fn ensure_frequencies(cfg: &RunConfig, remap: &LabelRemap) -> Result<FrequencyManifest> {
    let path = cfg.freqs_path();
    if path.exists() {
        return FrequencyManifest::load(&path);
    }
    let manifest = compute_frequencies(cfg, remap)?;
    manifest.save(&path)?;
    Ok(manifest)
}

/// Tallies remapped label counts over the training split.
pub fn compute_frequencies(cfg: &RunConfig, remap: &LabelRemap) -> Result<FrequencyManifest> {
    let entries = discover_split(&cfg.data.root, &cfg.data.train_sequences)?;
    let mut all = Vec::new();
    for entry in &entries {
        let Some(label_path) = &entry.labels else {
            return Err(Error::Invalid(format!(
                "scan {} has no label file",
                entry.scan.display()
            )));
        };
        let raw = read_labels(label_path, None)?;
        all.extend(remap.remap_all(&raw)?);
    }
    Ok(FrequencyManifest::from_label_iter(remap, all))
}

/// Validation pass: per-point predictions against per-point labels.
fn validation_miou<T: Scalar>(
    cfg: &RunConfig,
    remap: &LabelRemap,
    net: &S3Net,
    store: &mut ParamStore<T>,
    entries: &[ScanEntry],
) -> Result<f64> {
    let mut cm = ConfusionMatrix::new(remap.class_count());
    for entry in entries {
        let scan = read_scan(&entry.scan)?;
        let raw = read_labels(
            entry
                .labels
                .as_ref()
                .ok_or_else(|| Error::Invalid("validation scan missing labels".into()))?,
            Some(scan.len()),
        )?;
        let point_labels = remap.remap_all(&raw)?;
        let sample: VoxelSample<T> = voxel_sample(
            &scan,
            None,
            remap.class_count(),
            cfg.voxel_size.0,
            &cfg.range,
            0,
        )?;
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, store, &sample.tensor, false)?;
        let voxel_pred = argmax_rows(tape.value(out.logits.value));
        let point_pred: Vec<usize> = sample.point_rows.iter().map(|&r| voxel_pred[r]).collect();
        cm.accumulate(&point_pred, &point_labels);
    }
    Ok(cm.miou())
}

fn save_checkpoint_consistently<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    checkpoint::save_to_path(store, path)?;
    // Reload consistency: every stored record must reproduce the current
    // values exactly at f32 resolution.
    let file = std::fs::File::open(path)?;
    let records = checkpoint::read_records(std::io::BufReader::new(file))?;
    for (record, param) in records.iter().zip(store.iter()) {
        if record.0 != param.name {
            return Err(Error::Checkpoint(format!(
                "record order mismatch: {} vs {}",
                record.0, param.name
            )));
        }
        for (a, b) in record.1.iter().zip(param.value.iter()) {
            if *a != b.as_f64() as f32 {
                return Err(Error::Checkpoint(format!(
                    "checkpoint readback mismatch in {}",
                    param.name
                )));
            }
        }
    }
    Ok(())
}

/// The training loop. Emits one structured record per step
/// (`epoch= step= lr= wce= geo= total=`) and one per epoch with the
/// validation mIoU; records also land in the returned log.
pub fn run_training<T: Scalar>(
    cfg: &RunConfig,
    sink: &mut dyn FnMut(&str),
) -> Result<Vec<String>> {
    cfg.validate()?;
    let remap = LabelRemap::from_path(&cfg.data.remap)?;
    if remap.class_count() != cfg.network.class_count {
        return Err(Error::Config(format!(
            "remap table has {} classes but the network outputs {}",
            remap.class_count(),
            cfg.network.class_count
        )));
    }
    std::fs::create_dir_all(&cfg.training.out_dir)?;
    let manifest = ensure_frequencies(cfg, &remap)?;
    let alpha = class_weights(&manifest.frequencies()?);

    let mut store = ParamStore::<T>::new();
    let net = S3Net::new(cfg.network.clone(), &mut store, cfg.training.seed)?;

    let train_entries = discover_split(&cfg.data.root, &cfg.data.train_sequences)?;
    let val_entries = if cfg.data.val_sequences.is_empty() {
        Vec::new()
    } else {
        discover_split(&cfg.data.root, &cfg.data.val_sequences)?
    };

    let mut log = Vec::new();
    let mut emit = |line: String, log: &mut Vec<String>| {
        sink(&line);
        log.push(line);
    };

    let mut step = 0u64;
    for epoch in 0..cfg.training.epochs {
        let lr = exp_lr(epoch, cfg.optimizer.lr, cfg.optimizer.decay, cfg.optimizer.decay_period);
        for chunk in train_entries.chunks(cfg.training.batch_size) {
            let samples: Vec<VoxelSample<T>> = chunk
                .iter()
                .enumerate()
                .map(|(b, e)| load_sample(cfg, &remap, e, b as u32))
                .collect::<Result<_>>()?;
            let (batch, _) = merge_batch(samples)?;

            let grid = VoxelLabelGrid::new(batch.tensor.coords(), &batch.voxel_labels)?;
            let weights = mlga_weights(&grid);
            let labels = Arc::new(batch.voxel_labels.clone());

            let mut tape = Tape::new();
            let out = net.forward(&mut tape, &mut store, &batch.tensor, true)?;
            let wce = tape.wce_loss(out.logits.value, labels.clone(), &alpha)?;
            let geo = tape.geo_loss(out.logits.value, labels, &weights)?;
            let wce_s = tape.scale(wce, cfg.loss.wce_weight);
            let geo_s = tape.scale(geo, cfg.loss.geo_weight);
            let total = tape.add(wce_s, geo_s)?;

            store.zero_grads();
            tape.backward(total, &mut store)?;
            adam_step(&mut store, lr, &cfg.optimizer.adam);

            emit(
                format!(
                    "epoch={epoch} step={step} lr={lr} wce={} geo={} total={}",
                    tape.scalar(wce).as_f64(),
                    tape.scalar(geo).as_f64(),
                    tape.scalar(total).as_f64()
                ),
                &mut log,
            );
            step += 1;
        }

        if !val_entries.is_empty() {
            let miou = validation_miou(cfg, &remap, &net, &mut store, &val_entries)?;
            emit(format!("epoch={epoch} val_miou={miou}"), &mut log);
        }
        save_checkpoint_consistently(&store, &cfg.training.out_dir.join("checkpoint.bin"))?;
    }
    Ok(log)
}

/// Inference over the given sequences: per-point predictions written as raw
/// label ids in the submission layout
/// (`<out>/sequences/<seq>/predictions/NNNNNN.label`).
pub fn run_inference<T: Scalar>(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    sequences: &[String],
    out_dir: &Path,
) -> Result<usize> {
    let remap = LabelRemap::from_path(&cfg.data.remap)?;
    let mut store = ParamStore::<T>::new();
    let net = S3Net::new(cfg.network.clone(), &mut store, cfg.training.seed)?;
    checkpoint::load_from_path(&mut store, checkpoint_path)?;

    let entries = discover_split(&cfg.data.root, sequences)?;
    for entry in &entries {
        let scan = read_scan(&entry.scan)?;
        let sample: VoxelSample<T> = voxel_sample(
            &scan,
            None,
            remap.class_count(),
            cfg.voxel_size.0,
            &cfg.range,
            0,
        )?;
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &mut store, &sample.tensor, false)?;
        let voxel_pred = argmax_rows(tape.value(out.logits.value));
        let raw: Vec<u32> = sample
            .point_rows
            .iter()
            .map(|&r| remap.inverse(voxel_pred[r]))
            .collect();
        let dir = out_dir
            .join("sequences")
            .join(&entry.sequence)
            .join("predictions");
        std::fs::create_dir_all(&dir)?;
        write_labels(&dir.join(format!("{}.label", entry.name)), &raw)?;
    }
    Ok(entries.len())
}

/// Evaluates prediction files against ground truth over the given
/// sequences; returns the confusion matrix (class order = remap order).
pub fn evaluate_predictions(
    root: &Path,
    pred_root: &Path,
    sequences: &[String],
    remap: &LabelRemap,
) -> Result<ConfusionMatrix> {
    let entries = discover_split(root, sequences)?;
    let mut cm = ConfusionMatrix::new(remap.class_count());
    for entry in &entries {
        let gt_path = entry
            .labels
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("no labels for {}", entry.scan.display())))?;
        let gt_raw = read_labels(gt_path, None)?;
        let truths = remap.remap_all(&gt_raw)?;

        let pred_path = pred_root
            .join("sequences")
            .join(&entry.sequence)
            .join("predictions")
            .join(format!("{}.label", entry.name));
        let pred_raw = read_labels(&pred_path, Some(gt_raw.len()))?;

        for (&p, t) in pred_raw.iter().zip(truths.iter()) {
            let Some(t) = *t else { continue };
            match remap.remap(p)? {
                Some(pc) => cm.record(t, pc),
                None => {
                    return Err(Error::Invalid(format!(
                        "prediction label {p} maps to the ignore class"
                    )))
                }
            }
        }
    }
    Ok(cm)
}

/// Attention export for one scan: the top-fraction point indices plus the
/// selected points, written as a newline-separated index file and an `xyz`
/// text dump.
pub fn run_attention_export<T: Scalar>(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    scan_path: &Path,
    out_prefix: &Path,
    fraction: f64,
) -> Result<usize> {
    let remap = LabelRemap::from_path(&cfg.data.remap)?;
    let mut store = ParamStore::<T>::new();
    let net = S3Net::new(cfg.network.clone(), &mut store, cfg.training.seed)?;
    checkpoint::load_from_path(&mut store, checkpoint_path)?;

    let scan = read_scan(scan_path)?;
    let sample: VoxelSample<T> = voxel_sample(
        &scan,
        None,
        remap.class_count(),
        cfg.voxel_size.0,
        &cfg.range,
        0,
    )?;
    let mut tape = Tape::new();
    let out = net.forward(&mut tape, &mut store, &sample.tensor, false)?;
    let picked = export_attention(tape.value(out.last_decoder), &sample.point_rows, fraction);

    let idx_path = out_prefix.with_extension("indices.txt");
    let xyz_path = out_prefix.with_extension("xyz");
    let mut idx_text = String::new();
    let mut xyz_text = String::new();
    for &i in &picked {
        idx_text.push_str(&format!("{i}\n"));
        let p = scan.points[i];
        xyz_text.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    std::fs::write(&idx_path, idx_text)?;
    std::fs::write(&xyz_path, xyz_text)?;
    Ok(picked.len())
}
