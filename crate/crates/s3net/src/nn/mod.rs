//! The network building blocks: intra- and inter-channel attention,
//! residual modules and towers, and the encoder-decoder assembly.

pub mod attention;
pub mod layers;
pub mod network;
pub mod restower;

pub use attention::{SInterAm, SIntraAm};
pub use layers::{BnLayer, ConvLayer, LinearLayer};
pub use network::{
    argmax_rows, CoordinateCache, ForwardResult, LevelGeometry, LevelLink, LevelStructure,
    NetworkStructure, S3Net,
};
pub use restower::{ResModule, ResTower};

use crate::autodiff::ValueId;
use crate::error::{Error, Result};
use crate::sparse::CoordinateMap;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// A sparse tensor whose features live on a tape: coordinate metadata plus
/// the recorded value id.
#[derive(Debug, Clone)]
pub struct TracedTensor {
    pub coords: Arc<CoordinateMap>,
    pub stride: i32,
    pub value: ValueId,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub class_count: usize,
    pub stem_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub kernel_size: u32,
    /// Damping factor applied by the inter-channel attention block.
    pub lambda: f64,
    /// Bottleneck reduction ratio of the excitation pair.
    pub reduction: usize,
    /// Per-level placement flags; empty means "every level".
    pub encoder_sinter: Vec<bool>,
    pub encoder_sintra: Vec<bool>,
    pub decoder_sinter: Vec<bool>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_channels: 4,
            class_count: 19,
            stem_channels: 32,
            encoder_channels: vec![32, 64, 128, 256],
            kernel_size: 3,
            lambda: 0.35,
            reduction: 4,
            encoder_sinter: Vec::new(),
            encoder_sintra: Vec::new(),
            decoder_sinter: Vec::new(),
        }
    }
}

impl NetworkConfig {
    /// Desk-scale variant used by the toy training and the gradient suite.
    pub fn toy() -> Self {
        Self {
            input_channels: 4,
            class_count: 2,
            stem_channels: 8,
            encoder_channels: vec![8, 16, 32, 64],
            reduction: 4,
            ..Default::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.encoder_channels.len()
    }

    /// Channel count entering each level: stem first, then the encoder
    /// outputs. Index `i` is the width at pyramid level `i`.
    pub fn level_channels(&self) -> Vec<usize> {
        std::iter::once(self.stem_channels)
            .chain(self.encoder_channels.iter().copied())
            .collect()
    }

    fn flag(flags: &[bool], level: usize) -> bool {
        if flags.is_empty() {
            true
        } else {
            flags[level]
        }
    }

    pub fn encoder_sinter_at(&self, level: usize) -> bool {
        Self::flag(&self.encoder_sinter, level)
    }

    pub fn encoder_sintra_at(&self, level: usize) -> bool {
        Self::flag(&self.encoder_sintra, level)
    }

    pub fn decoder_sinter_at(&self, level: usize) -> bool {
        Self::flag(&self.decoder_sinter, level)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty() {
            return Err(Error::Config("encoder_channels must be non-empty".into()));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(Error::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config(format!(
                "lambda must lie in (0, 1], got {}",
                self.lambda
            )));
        }
        if self.class_count < 2 {
            return Err(Error::Config("class_count must be at least 2".into()));
        }
        for flags in [
            &self.encoder_sinter,
            &self.encoder_sintra,
            &self.decoder_sinter,
        ] {
            if !flags.is_empty() && flags.len() != self.levels() {
                return Err(Error::Config(format!(
                    "attention flag list length {} does not match level count {}",
                    flags.len(),
                    self.levels()
                )));
            }
        }
        for (level, &ch) in self.level_channels().iter().enumerate() {
            let uses_sinter = (level < self.levels()
                && (self.encoder_sinter_at(level) || self.decoder_sinter_at(level)))
                || level == self.levels();
            if uses_sinter && ch % self.reduction != 0 {
                return Err(Error::Config(format!(
                    "reduction {} does not divide channel count {ch} at level {level}",
                    self.reduction
                )));
            }
        }
        Ok(())
    }
}
