//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function has a plain Rust counterpart so the logic runs
//! and is tested natively.

use gdgm::autodiff::{DenseArray, Tape};
use gdgm::data::{synth_dataset, SynthConfig};
use gdgm::encoder::{integrate, Solver};
use gdgm::trainer::{train, RunConfig};
use gdgm::wavelet::beta_response;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn decay(solver: Solver, steps: usize, t: f64) -> Result<f64, String> {
    let mut tape = Tape::new();
    let h = tape.leaf(DenseArray::from_vec(1, 1, vec![1.0]));
    let out = integrate(&mut tape, h, &[t], solver, steps.max(1), |t: &mut Tape, x| Ok(t.scale(x, -1.0)))
        .map_err(|e| e.to_string())?;
    Ok(tape.value(out).get(0, 0))
}

/// Trajectories of `dh/dt = -h`, `h(0) = 1` on `[0, horizon]` with `steps`
/// equal steps. Rows are `[t, exact, euler, rk4]`, flattened.
pub fn solver_trajectories(steps: usize, horizon: f64) -> Result<Vec<f64>, String> {
    if steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
        return Err("steps must be positive and the horizon finite and positive".into());
    }
    let dt = horizon / steps as f64;
    let mut out = Vec::with_capacity(4 * (steps + 1));
    for k in 0..=steps {
        let t = k as f64 * dt;
        let (euler, rk4) = if k == 0 { (1.0, 1.0) } else { (decay(Solver::Euler, k, t)?, decay(Solver::Rk4, k, t)?) };
        out.extend_from_slice(&[t, (-t).exp(), euler, rk4]);
    }
    Ok(out)
}

/// Frequency responses of the `order + 1` Beta wavelet kernels sampled at
/// `samples` evenly spaced eigenvalues in `[0, 2]`, one kernel per row.
pub fn wavelet_responses(order: usize, samples: usize) -> Result<Vec<f64>, String> {
    if samples < 2 {
        return Err("need at least two samples".into());
    }
    let mut out = Vec::with_capacity((order + 1) * samples);
    for i in 0..=order {
        for s in 0..samples {
            let lambda = 2.0 * s as f64 / (samples - 1) as f64;
            out.push(beta_response(lambda, i, order).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

/// Generate a small planted-ring market, train the full model and return
/// test metrics plus the validation AUC trace as JSON.
pub fn market_report(seed: u64, n_transactions: usize, epochs: usize) -> Result<String, String> {
    let synth = SynthConfig {
        n_transactions,
        n_accounts: (n_transactions / 20).max(12),
        n_rings: (n_transactions / 250).max(2),
        seed,
        ..SynthConfig::default()
    };
    let records = synth_dataset(&synth).map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        seed,
        epochs,
        h_dim: 16,
        att_hidden: 16,
        q_dim: 32,
        cls_hidden: 16,
        wavelet_hidden: 16,
        wavelet_post_hidden: 8,
        pretrain_epochs: 30,
        ..RunConfig::default()
    };
    let out = train(&cfg, &records).map_err(|e| e.to_string())?;
    let trace: Vec<f64> = out.fitted.trace.iter().map(|t| t.val_auc).collect();
    Ok(json!({
        "n_transactions": records.len(),
        "n_fraud": records.iter().filter(|r| r.label == Some(1)).count(),
        "best_epoch": out.fitted.best_epoch,
        "val_auc": trace,
        "test": out.test,
    })
    .to_string())
}

#[wasm_bindgen(js_name = solverTrajectories)]
pub fn solver_trajectories_js(steps: usize, horizon: f64) -> Result<Vec<f64>, JsError> {
    solver_trajectories(steps, horizon).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = waveletResponses)]
pub fn wavelet_responses_js(order: usize, samples: usize) -> Result<Vec<f64>, JsError> {
    wavelet_responses(order, samples).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = marketReport)]
pub fn market_report_js(seed: u32, n_transactions: usize, epochs: usize) -> Result<String, JsError> {
    market_report(u64::from(seed), n_transactions, epochs).map_err(|e| JsError::new(&e))
}
