//! Dataset ingestion: binary scan/label IO, the label remapping table,
//! class-frequency manifests and the scan-to-voxel-sample pipeline.

pub mod freqs;
pub mod kitti;
pub mod pipeline;
pub mod remap;

pub use freqs::FrequencyManifest;
pub use kitti::{read_labels, read_scan, write_labels, write_scan, Scan};
pub use pipeline::{scan_features, voxel_sample, VoxelSample};
pub use remap::LabelRemap;
