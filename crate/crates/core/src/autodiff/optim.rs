use crate::autodiff::ParameterStore;
use crate::error::{GdgmError, Result};

/// Adaptive-moment (Adam) hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Apply one bias-corrected Adam update to every trainable parameter, then
/// clear all gradients.
///
/// Gradients are checked for finiteness before any parameter moves, so a
/// failed step leaves the store untouched.
pub fn optimizer_step(store: &mut ParameterStore, cfg: AdamConfig) -> Result<()> {
    for (name, p) in store.iter() {
        if p.trainable && !p.grad.is_finite() {
            return Err(GdgmError::NonFiniteGradient(name.to_string()));
        }
    }
    let t = store.step_count() + 1;
    store.set_step_count(t);
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (_, p) in store.params_mut() {
        if p.trainable {
            let g = p.grad.data();
            let m = p.first_moment.data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            }
            let v = p.second_moment.data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            }
            let (m, v) = (p.first_moment.data(), p.second_moment.data());
            for ((w, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        p.grad.fill(0.0);
    }
    Ok(())
}
