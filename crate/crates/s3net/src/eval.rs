//! Evaluation: confusion matrix, per-class intersection-over-union, and the
//! attention-map point selection.

use crate::scalar::Scalar;
use ndarray::Array2;

/// C x C integer counts; rows index the ground truth, columns the
/// prediction. Ignored ground-truth points are never recorded, so the total
/// count equals the number of evaluated points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.classes + pred] += 1;
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Exact integer merge; partitioning points across accumulators and
    /// merging gives the same matrix as a single pass.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
    }

    /// Accumulates predictions against ground truth, skipping rows whose
    /// truth is the ignore label.
    pub fn accumulate(&mut self, preds: &[usize], truths: &[Option<usize>]) {
        assert_eq!(preds.len(), truths.len(), "pred/label length mismatch");
        for (&p, t) in preds.iter().zip(truths.iter()) {
            if let Some(t) = *t {
                self.record(t, p);
            }
        }
    }

    /// `TP / (TP + FP + FN)` per class; `None` when the denominator is zero
    /// (class absent from both prediction and truth).
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.count(c, c);
                let fp: u64 = (0..self.classes)
                    .filter(|&t| t != c)
                    .map(|t| self.count(t, c))
                    .sum();
                let fn_: u64 = (0..self.classes)
                    .filter(|&p| p != c)
                    .map(|p| self.count(c, p))
                    .sum();
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean IoU over the classes with a defined IoU.
    pub fn miou(&self) -> f64 {
        let ious: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if ious.is_empty() {
            return 0.0;
        }
        ious.iter().sum::<f64>() / ious.len() as f64
    }
}

/// Independent set-based IoU for one class, counting membership directly
/// instead of going through the confusion matrix.
pub fn iou_from_sets(preds: &[usize], truths: &[Option<usize>], class: usize) -> Option<f64> {
    let mut intersection = 0u64;
    let mut union = 0u64;
    for (&p, t) in preds.iter().zip(truths.iter()) {
        let Some(t) = *t else { continue };
        let in_pred = p == class;
        let in_truth = t == class;
        if in_pred && in_truth {
            intersection += 1;
        }
        if in_pred || in_truth {
            union += 1;
        }
    }
    (union > 0).then(|| intersection as f64 / union as f64)
}

/// Per-row Euclidean norms, min-max normalized over the scan to `[0, 1]`.
/// A constant score field normalizes to all zeros.
pub fn normalized_row_norms<T: Scalar>(features: &Array2<T>) -> Vec<f64> {
    let norms: Vec<f64> = features
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt())
        .collect();
    let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        norms.iter().map(|&n| (n - min) / (max - min)).collect()
    } else {
        vec![0.0; norms.len()]
    }
}

/// Attention export: per-point scalar is the feature norm of the point's
/// voxel row, min-max normalized over the scan; returns the indices of the
/// top `ceil(fraction * n)` points.
pub fn export_attention<T: Scalar>(
    decoder_feats: &Array2<T>,
    point_rows: &[usize],
    fraction: f64,
) -> Vec<usize> {
    let voxel_norms: Vec<f64> = decoder_feats
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt())
        .collect();
    let raw: Vec<f64> = point_rows.iter().map(|&r| voxel_norms[r]).collect();
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scores: Vec<f64> = if max > min {
        raw.iter().map(|&n| (n - min) / (max - min)).collect()
    } else {
        vec![0.0; raw.len()]
    };
    top_fraction_indices(&scores, fraction)
}

/// Indices of the `ceil(fraction * n)` highest scores, ties broken by the
/// lower index; the result is sorted ascending.
pub fn top_fraction_indices(scores: &[f64], fraction: f64) -> Vec<usize> {
    let take = ((fraction * scores.len() as f64).ceil() as usize).min(scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| a.cmp(&b))
    });
    let mut picked: Vec<usize> = order.into_iter().take(take).collect();
    picked.sort_unstable();
    picked
}
