//! A self-contained sparse 3D tensor compute engine with reverse-mode
//! differentiation, plus the S3Net LiDAR semantic-segmentation network
//! built on top of it.
//!
//! The engine stores only occupied voxels: a [`sparse::SparseTensor`] pairs a
//! [`sparse::CoordinateMap`] with a row-aligned feature matrix, and sparse
//! convolutions are executed from precomputed [`sparse::KernelMap`]s by
//! gather-multiply-scatter. A recording [`autodiff::Tape`] provides reverse-mode
//! gradients through every primitive, and [`nn::S3Net`] assembles the
//! encoder-decoder network with its intra- and inter-channel attention blocks,
//! residual towers and the weighted cross-entropy plus geometry-aware loss.
//!
//! See the `book/` guide for a narrative walk-through of each subsystem.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod nn;
pub mod ops;
pub mod range;
pub mod scalar;
pub mod sparse;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
