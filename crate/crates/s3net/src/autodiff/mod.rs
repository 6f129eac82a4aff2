//! Reverse-mode differentiation over the sparse primitives: a recording
//! tape, a flat parameter store, the Adam optimizer and the exponential
//! learning-rate schedule.

pub mod adam;
pub mod checkpoint;
pub mod params;
pub mod schedule;
pub mod tape;

pub use adam::{adam_step, AdamConfig};
pub use params::{Param, ParamId, ParamStore};
pub use schedule::exp_lr;
pub use tape::{Tape, ValueId};
