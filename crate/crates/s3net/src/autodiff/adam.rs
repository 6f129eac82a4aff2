use crate::autodiff::params::ParamStore;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Adam hyperparameters. `beta1` doubles as the momentum knob; weight decay
/// is decoupled (applied to the value before the adaptive delta).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    0.0005
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: default_weight_decay(),
        }
    }
}

/// One Adam update over every trainable parameter, with bias correction.
/// Non-trainable entries (running statistics) are untouched.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, lr: f64, cfg: &AdamConfig) {
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let eps = T::from_f64(cfg.eps);
    let lr_t = T::from_f64(lr);
    let wd = T::from_f64(lr * cfg.weight_decay);

    for p in store.iter_mut() {
        if !p.trainable {
            continue;
        }
        p.step += 1;
        if cfg.weight_decay != 0.0 {
            p.value.mapv_inplace(|v| v - wd * v);
        }
        let bc1 = one - b1.powi(p.step as i32);
        let bc2 = one - b2.powi(p.step as i32);

        ndarray::Zip::from(&mut p.m)
            .and(&p.grad)
            .for_each(|m, &g| *m = b1 * *m + (one - b1) * g);
        ndarray::Zip::from(&mut p.v)
            .and(&p.grad)
            .for_each(|v, &g| *v = b2 * *v + (one - b2) * g * g);
        ndarray::Zip::from(&mut p.value)
            .and(&p.m)
            .and(&p.v)
            .for_each(|val, &m, &v| {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *val = *val - lr_t * m_hat / (v_hat.sqrt() + eps);
            });
    }
}
