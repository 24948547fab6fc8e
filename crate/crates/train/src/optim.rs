//! Learning-rate schedule, AdamW and gradient clipping.

use std::f64::consts::PI;

/// Linear warmup from 0 to `base_lr` over `warmup_steps`, then cosine decay
/// reaching `base_lr / 100` at the final step.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> f64 {
    let floor = base_lr / 100.0;
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(1 + warmup_steps).max(1);
    let progress = ((step - warmup_steps) as f64 / span as f64).min(1.0);
    floor + (base_lr - floor) * 0.5 * (1.0 + (PI * progress).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates for one parameter array.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One AdamW update at 1-based step `t`. Weight decay is decoupled:
/// `theta <- theta - lr * wd * theta` precedes the Adam term. `decay`
/// switches the decay off for this array.
pub fn adamw_step(
    params: &mut [f32],
    grads: &[f32],
    state: &mut AdamState,
    t: u64,
    lr: f64,
    cfg: &AdamWConfig,
    decay: bool,
) {
    assert_eq!(params.len(), grads.len(), "adamw_step: gradient length");
    assert_eq!(params.len(), state.m.len(), "adamw_step: state length");
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let wd = if decay { cfg.weight_decay } else { 0.0 };
    for i in 0..params.len() {
        let g = grads[i] as f64;
        let mut p = params[i] as f64;
        p -= lr * wd * p;
        let m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        p -= lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
        params[i] = p as f32;
    }
}

/// Global L2 norm over all gradient arrays.
pub fn global_norm(grads: &[Vec<f32>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`
/// (0 disables). Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f32>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}
