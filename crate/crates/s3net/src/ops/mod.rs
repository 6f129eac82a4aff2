//! Differentiable primitives on sparse tensors: convolution in gather-
//! multiply-scatter form, its transpose, pooling, and the pointwise family.
//!
//! Every primitive is a pure function with an explicit backward companion;
//! the [`crate::autodiff`] tape records them and replays the backwards in
//! reverse order.

pub mod conv;
pub mod pointwise;
pub mod pool;

pub use conv::{
    sparse_conv_backward, sparse_conv_forward, sparse_conv_transpose, ConvWeights,
};
pub use pointwise::{add, batch_norm_eval, batch_norm_train, linear, mul, relu, sigmoid, BnCtx, BnStats};
pub use pool::{broadcast_mul, global_avg_pool, BatchGroups};
