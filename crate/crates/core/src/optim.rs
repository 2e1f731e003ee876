//! Adam, the 1-cycle learning-rate policy and the temperature schedule.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Adam moment accumulators for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self::with_hyper(num_params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(num_params: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0, beta1, beta2, eps }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state has {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    state.step(params, grads, lr)
}

/// 1-cycle policy: linear warm-up from `peak/10` to `peak` over the first
/// half cycle, linear decay to `peak/100` over the second, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub cycle_len: usize,
    pub total_epochs: usize,
}

pub fn one_cycle_lr(epoch: usize, sched: &LrSchedule) -> f64 {
    let e = epoch as f64;
    let cycle = sched.cycle_len as f64;
    if e < cycle / 2.0 {
        lr_warmup(e, sched)
    } else if e < cycle {
        lr_decay(e, sched)
    } else {
        sched.peak_lr / 100.0
    }
}

fn lr_warmup(e: f64, sched: &LrSchedule) -> f64 {
    let start = sched.peak_lr / 10.0;
    start + (sched.peak_lr - start) * e / (sched.cycle_len as f64 / 2.0)
}

fn lr_decay(e: f64, sched: &LrSchedule) -> f64 {
    let cycle = sched.cycle_len as f64;
    let half = cycle / 2.0;
    sched.peak_lr + (sched.peak_lr / 100.0 - sched.peak_lr) * (e - half) / (cycle - half)
}

/// Softmax temperature per epoch.
///
/// Annealed: `t0` for the first half cycle, linear down to `1` over the
/// second half, `1` afterwards. Otherwise constant `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub t0: f64,
    pub cycle_len: usize,
    pub total_epochs: usize,
    pub annealed: bool,
}

pub fn annealed_temperature(epoch: usize, sched: &TemperatureSchedule) -> f64 {
    if !sched.annealed {
        return sched.t0;
    }
    let cycle = sched.cycle_len as f64;
    let half = cycle / 2.0;
    let e = epoch as f64;
    if e < half {
        sched.t0
    } else if e < cycle {
        // one division, so integer T₀ gives a correctly rounded value
        ((sched.t0 * (cycle - e) + (e - half)) / (cycle - half)).clamp(1.0, sched.t0)
    } else {
        1.0
    }
}
