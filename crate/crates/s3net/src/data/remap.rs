//! Raw-label to train-id remapping, loaded from a checked-in TOML table.
//!
//! The table declares the evaluated class names in order (the train id is
//! the position), the raw-to-train mapping, the raw ids collapsed to the
//! ignore label, and the inverse mapping used when writing predictions.

use crate::error::{Error, Result};
use serde::Deserialize;
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Deserialize)]
struct RemapFile {
    names: Vec<String>,
    map: Vec<(u32, usize)>,
    ignore: Vec<u32>,
    inverse: Vec<u32>,
}

/// Parsed label mapping.
#[derive(Debug, Clone)]
pub struct LabelRemap {
    names: Vec<String>,
    forward: HashMap<u32, Option<usize>>,
    inverse: Vec<u32>,
}

impl LabelRemap {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: RemapFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("remap table: {e}")))?;
        if file.inverse.len() != file.names.len() {
            return Err(Error::Config(format!(
                "inverse table has {} entries for {} classes",
                file.inverse.len(),
                file.names.len()
            )));
        }
        let mut forward: HashMap<u32, Option<usize>> = HashMap::new();
        for &(raw, train) in &file.map {
            if train >= file.names.len() {
                return Err(Error::Config(format!(
                    "raw id {raw} maps to class {train}, but only {} classes are declared",
                    file.names.len()
                )));
            }
            if forward.insert(raw, Some(train)).is_some() {
                return Err(Error::Config(format!("raw id {raw} mapped twice")));
            }
        }
        for &raw in &file.ignore {
            if forward.insert(raw, None).is_some() {
                return Err(Error::Config(format!("raw id {raw} mapped twice")));
            }
        }
        Ok(Self {
            names: file.names,
            forward,
            inverse: file.inverse,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn class_count(&self) -> usize {
        self.names.len()
    }

    /// Class names in evaluation order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Maps one raw semantic id; `None` is the ignore label.
    pub fn remap(&self, raw: u32) -> Result<Option<usize>> {
        self.forward
            .get(&raw)
            .copied()
            .ok_or(Error::UnknownRawLabel(raw))
    }

    /// Maps a whole label vector.
    pub fn remap_all(&self, raw: &[u32]) -> Result<Vec<Option<usize>>> {
        raw.iter().map(|&r| self.remap(r)).collect()
    }

    /// Raw id written out for a train id (the static representative).
    pub fn inverse(&self, train: usize) -> u32 {
        self.inverse[train]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn semantic_kitti() -> LabelRemap {
        LabelRemap::from_toml(include_str!("../../../../configs/semantic-kitti.toml")).unwrap()
    }

    #[test]
    fn unlabeled_goes_to_ignore() {
        let remap = semantic_kitti();
        assert_eq!(remap.remap(0).unwrap(), None);
    }

    #[test]
    fn moving_classes_merge_with_static_counterparts() {
        let remap = semantic_kitti();
        // moving-car and car; moving-person and person.
        assert_eq!(remap.remap(252).unwrap(), remap.remap(10).unwrap());
        assert_eq!(remap.remap(254).unwrap(), remap.remap(30).unwrap());
        assert_eq!(remap.remap(253).unwrap(), remap.remap(31).unwrap());
    }

    #[test]
    fn nineteen_classes_in_benchmark_order() {
        let remap = semantic_kitti();
        assert_eq!(remap.class_count(), 19);
        assert_eq!(remap.names()[0], "car");
        assert_eq!(remap.names()[18], "traffic-sign");
        assert_eq!(remap.remap(10).unwrap(), Some(0));
        assert_eq!(remap.remap(81).unwrap(), Some(18));
    }

    #[test]
    fn unknown_raw_id_is_an_error() {
        let remap = semantic_kitti();
        assert!(matches!(
            remap.remap(12345),
            Err(Error::UnknownRawLabel(12345))
        ));
    }

    #[test]
    fn histogram_matches_mapping_table_oracle() {
        use rand::{Rng, SeedableRng};
        let remap = semantic_kitti();
        let raw_ids: Vec<u32> = vec![
            0, 1, 10, 11, 13, 15, 16, 18, 20, 30, 31, 32, 40, 44, 48, 49, 50, 51, 52, 60, 70, 71,
            72, 80, 81, 99, 252, 253, 254, 255, 256, 257, 258, 259,
        ];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<u32> = (0..5000)
            .map(|_| raw_ids[rng.gen_range(0..raw_ids.len())])
            .collect();
        let mapped = remap.remap_all(&labels).unwrap();

        // Oracle: recount through an independently keyed table.
        let mut table: HashMap<u32, Option<usize>> = HashMap::new();
        for &raw in &raw_ids {
            table.insert(raw, remap.remap(raw).unwrap());
        }
        let mut got = vec![0usize; remap.class_count() + 1];
        let mut expected = vec![0usize; remap.class_count() + 1];
        for (&raw, m) in labels.iter().zip(mapped.iter()) {
            match m {
                Some(c) => got[*c] += 1,
                None => got[remap.class_count()] += 1,
            }
            match table[&raw] {
                Some(c) => expected[c] += 1,
                None => expected[remap.class_count()] += 1,
            }
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn inverse_round_trips_train_ids() {
        let remap = semantic_kitti();
        for train in 0..remap.class_count() {
            let raw = remap.inverse(train);
            assert_eq!(remap.remap(raw).unwrap(), Some(train));
        }
    }
}
