//! Learning-rate schedule and Adam.

use std::f64::consts::PI;

use super::{AdamConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::models::Param;

/// Number of linear warmup steps for a run of `total_steps`.
pub fn warmup_steps(total_steps: usize, cfg: &TrainConfig) -> usize {
    (cfg.warmup_fraction * total_steps as f64).floor() as usize
}

/// Linear warmup from `lr_warm_start` to `lr_peak`, then cosine decay to
/// `lr_floor` at `total_steps`. Steps past the end stay at the floor.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let warm = warmup_steps(total_steps, cfg);
    if step < warm {
        return cfg.lr_warm_start + (cfg.lr_peak - cfg.lr_warm_start) * step as f64 / warm as f64;
    }
    if total_steps <= warm {
        return cfg.lr_peak;
    }
    let u = ((step - warm) as f64 / (total_steps - warm) as f64).min(1.0);
    cfg.lr_floor + (cfg.lr_peak - cfg.lr_floor) * (1.0 + (PI * u).cos()) / 2.0
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &[Param]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        OptimizerState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place. Gradients are zeroed afterwards.
/// Any non-finite gradient aborts before a single parameter changes.
pub fn adam_step(
    params: &mut [Param],
    grads: &mut [Vec<f64>],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "adam: {} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads.iter()).zip(&state.m) {
        if g.len() != p.value.numel() || m.len() != p.value.numel() {
            return Err(Error::Contract(format!(
                "adam: buffers of {} do not match its {} elements",
                p.name,
                p.value.numel()
            )));
        }
        if let Some(k) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {} is {} at element {k} (optimizer step {})",
                p.name,
                g[k],
                state.step + 1
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &mut grads[i]);
        for (k, x) in p.value.data_mut().iter_mut().enumerate() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        g.fill(0.0);
    }
    Ok(())
}
