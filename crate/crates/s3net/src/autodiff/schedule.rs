/// Exponential learning-rate schedule stepped at epoch boundaries:
/// `base_lr * decay^(epoch / period)` with integer division.
pub fn exp_lr(epoch: u64, base_lr: f64, decay: f64, period: u64) -> f64 {
    assert!(period > 0, "schedule period must be positive");
    base_lr * decay.powi((epoch / period) as i32)
}
