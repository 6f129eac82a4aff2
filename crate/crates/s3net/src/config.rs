//! Run configuration: one TOML file drives preprocessing, training,
//! inference and evaluation. Defaults follow the reference training recipe
//! (lr 0.001, weight decay 0.0005, decay 0.9 every 10 epochs, damping 0.35,
//! loss weights 0.75/0.25, 120 epochs).

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::nn::NetworkConfig;
use crate::range::RangeConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub root: PathBuf,
    pub train_sequences: Vec<String>,
    pub val_sequences: Vec<String>,
    /// Label remap table (checked-in TOML).
    pub remap: PathBuf,
    /// Frequency manifest; defaults to `<root>/class_freqs.toml`.
    pub freqs: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("."),
            train_sequences: vec![
                "00".into(),
                "01".into(),
                "02".into(),
                "03".into(),
                "04".into(),
                "05".into(),
                "06".into(),
                "07".into(),
                "09".into(),
                "10".into(),
            ],
            val_sequences: vec!["08".into()],
            remap: PathBuf::from("configs/semantic-kitti.toml"),
            freqs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub wce_weight: f64,
    pub geo_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            wce_weight: 0.75,
            geo_weight: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub decay: f64,
    pub decay_period: u64,
    #[serde(flatten)]
    pub adam: AdamConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            decay: 0.9,
            decay_period: 10,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub precision: Precision,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            batch_size: 2,
            seed: 42,
            precision: Precision::F32,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub voxel_size: VoxelConfig,
    pub range: RangeConfig,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub optimizer: OptimConfig,
    pub training: TrainConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoxelConfig(pub f64);

impl Default for VoxelConfig {
    fn default() -> Self {
        Self(0.05)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.voxel_size.0 <= 0.0 {
            return Err(Error::Config("voxel_size must be positive".into()));
        }
        if self.loss.wce_weight < 0.0 || self.loss.geo_weight < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.training.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn freqs_path(&self) -> PathBuf {
        self.data
            .freqs
            .clone()
            .unwrap_or_else(|| self.data.root.join("class_freqs.toml"))
    }
}
