//! Class-frequency manifest: per-class counts over a training split,
//! stored as human-readable TOML next to the dataset.

use crate::data::remap::LabelRemap;
use crate::error::{Error, Result};
use crate::loss::ClassFrequency;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
pub struct FrequencyManifest {
    pub total: u64,
    pub classes: Vec<ClassEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: usize,
    pub name: String,
    pub count: u64,
    pub freq: f64,
}

impl FrequencyManifest {
    /// Tallies remapped labels; ignored labels are not counted.
    pub fn from_label_iter(
        remap: &LabelRemap,
        labels: impl IntoIterator<Item = Option<usize>>,
    ) -> Self {
        let mut counts = vec![0u64; remap.class_count()];
        for label in labels {
            if let Some(c) = label {
                counts[c] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        let classes = counts
            .iter()
            .enumerate()
            .map(|(id, &count)| ClassEntry {
                id,
                name: remap.names()[id].clone(),
                count,
                freq: if total > 0 {
                    count as f64 / total as f64
                } else {
                    0.0
                },
            })
            .collect();
        Self { total, classes }
    }

    pub fn counts(&self) -> Vec<u64> {
        self.classes.iter().map(|c| c.count).collect()
    }

    /// Converts to validated frequencies; zero-count classes are an error
    /// naming the class.
    pub fn frequencies(&self) -> Result<ClassFrequency> {
        ClassFrequency::from_counts(&self.counts())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("frequency manifest: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("frequency manifest: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::class_weights;

    fn toy_remap() -> LabelRemap {
        LabelRemap::from_toml(include_str!("../../../../configs/toy.toml")).unwrap()
    }

    #[test]
    fn counts_skip_ignored_labels() {
        let remap = toy_remap();
        let labels = vec![Some(0), Some(0), None, Some(2), Some(1), Some(1), Some(1)];
        let manifest = FrequencyManifest::from_label_iter(&remap, labels);
        assert_eq!(manifest.total, 6);
        assert_eq!(manifest.counts(), vec![2, 3, 1]);
    }

    #[test]
    fn frequencies_recount_matches_weights() {
        let remap = toy_remap();
        // 64 ground, 32 wall, 4 object.
        let labels: Vec<Option<usize>> = std::iter::repeat(Some(0))
            .take(64)
            .chain(std::iter::repeat(Some(1)).take(32))
            .chain(std::iter::repeat(Some(2)).take(4))
            .collect();
        let manifest = FrequencyManifest::from_label_iter(&remap, labels.clone());
        let freqs = manifest.frequencies().unwrap();
        let alpha = class_weights(&freqs);

        // Independent recount.
        let mut counts = [0u64; 3];
        for l in labels.into_iter().flatten() {
            counts[l] += 1;
        }
        let total: u64 = counts.iter().sum();
        for c in 0..3 {
            let f = counts[c] as f64 / total as f64;
            assert!((freqs.freqs()[c] - f).abs() < 1e-9);
            assert!((alpha[c] - 1.0 / f.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn manifest_round_trips_through_toml() {
        let remap = toy_remap();
        let manifest =
            FrequencyManifest::from_label_iter(&remap, vec![Some(0), Some(1), Some(2), Some(0)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("freqs.toml");
        manifest.save(&path).unwrap();
        let back = FrequencyManifest::load(&path).unwrap();
        assert_eq!(back.total, manifest.total);
        assert_eq!(back.counts(), manifest.counts());
    }
}
