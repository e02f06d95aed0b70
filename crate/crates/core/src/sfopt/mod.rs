//! Schedule-free AdamW and a reference AdamW.
//!
//! Schedule-free AdamW keeps three parameter sequences: `z` takes
//! Adam-normalized gradient steps, `x` is a weighted running average of `z`
//! (the parameters used for evaluation and checkpoints), and
//! `y = (1 - beta1) z + beta1 x` is the point where gradients are evaluated.
//! A linear warmup on the step size replaces any decaying schedule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptError {
    #[error("gradient contains a non-finite value at index {0}")]
    NonFiniteGradient(usize),
    #[error("optimizer state became non-finite at index {0}")]
    NonFiniteState(usize),
    #[error("gradient length {got} != parameter count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
}

pub type Result<T> = std::result::Result<T, OptError>;

/// Schedule-free AdamW hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SfHyper {
    pub lr: f64,
    pub weight_decay: f64,
    /// Linear warmup length in steps; 0 disables warmup.
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for SfHyper {
    fn default() -> Self {
        Self {
            lr: 0.005,
            weight_decay: 0.01,
            warmup_steps: 1000,
            beta1: 0.95,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl SfHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && [self.lr, self.beta1, self.beta2, self.eps, self.weight_decay]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(OptError::InvalidHyper(format!("{self:?}")))
        }
    }

    /// Step size at step `t >= 1`: `lr * min(1, t / warmup_steps)`.
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * (t as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

/// Schedule-free AdamW state.
#[derive(Debug, Clone, PartialEq)]
pub struct SfState {
    /// Averaged sequence; these are the model parameters.
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// Second-moment estimate.
    pub v: Vec<f64>,
    pub t: u64,
    /// Running sum of squared step sizes.
    pub lr_sq_sum: f64,
}

impl SfState {
    pub fn new(theta0: &[f64]) -> Self {
        Self {
            x: theta0.to_vec(),
            z: theta0.to_vec(),
            v: vec![0.0; theta0.len()],
            t: 0,
            lr_sq_sum: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// `y = (1 - beta1) z + beta1 x`, the point where the next gradient is taken.
pub fn eval_point(state: &SfState, beta1: f64) -> Vec<f64> {
    state
        .z
        .iter()
        .zip(&state.x)
        .map(|(z, x)| (1.0 - beta1) * z + beta1 * x)
        .collect()
}

fn check_grad(g: &[f64], n: usize) -> Result<()> {
    if g.len() != n {
        return Err(OptError::LengthMismatch {
            expected: n,
            got: g.len(),
        });
    }
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(OptError::NonFiniteGradient(i));
    }
    Ok(())
}

/// One schedule-free AdamW step with gradient `g` taken at [`eval_point`].
///
/// On error the state is left untouched.
#[allow(clippy::needless_range_loop)]
pub fn sf_step(state: &mut SfState, g: &[f64], hyper: &SfHyper) -> Result<()> {
    check_grad(g, state.len())?;
    let t = state.t + 1;
    let lr = hyper.lr_at(t);
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let bias = 1.0 - b2.powf(t as f64);
    let lr_sq_sum = state.lr_sq_sum + lr * lr;
    let c = lr * lr / lr_sq_sum;

    let mut next = state.clone();
    for i in 0..state.len() {
        let y = (1.0 - b1) * state.z[i] + b1 * state.x[i];
        let v = b2 * state.v[i] + (1.0 - b2) * g[i] * g[i];
        let v_hat = v / bias;
        let z = state.z[i] - lr * g[i] / (v_hat.sqrt() + hyper.eps) - lr * hyper.weight_decay * y;
        let x = state.x[i] + c * (z - state.x[i]);
        if !(x.is_finite() && z.is_finite() && v.is_finite()) {
            return Err(OptError::NonFiniteState(i));
        }
        next.v[i] = v;
        next.z[i] = z;
        next.x[i] = x;
    }
    next.t = t;
    next.lr_sq_sum = lr_sq_sum;
    *state = next;
    Ok(())
}

/// Hyperparameters and state bundled together.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleFree {
    pub hyper: SfHyper,
    pub state: SfState,
}

impl ScheduleFree {
    pub fn new(hyper: SfHyper, theta0: &[f64]) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            state: SfState::new(theta0),
        })
    }

    pub fn eval_point(&self) -> Vec<f64> {
        eval_point(&self.state, self.hyper.beta1)
    }

    pub fn step(&mut self, g: &[f64]) -> Result<()> {
        sf_step(&mut self.state, g, &self.hyper)
    }

    /// Parameters for evaluation and checkpoints.
    pub fn params(&self) -> &[f64] {
        &self.state.x
    }
}

/// AdamW hyperparameters (constant learning rate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(OptError::InvalidHyper(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub hyper: AdamWHyper,
}

impl AdamWState {
    pub fn new(hyper: AdamWHyper, n: usize) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            hyper,
        })
    }
}

/// Bias-corrected Adam step with decoupled weight decay:
/// `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
pub fn adamw_step(state: &mut AdamWState, g: &[f64], params: &mut [f64]) -> Result<()> {
    check_grad(g, params.len())?;
    if state.m.len() != params.len() {
        return Err(OptError::LengthMismatch {
            expected: state.m.len(),
            got: params.len(),
        });
    }
    let h = &state.hyper;
    let t = state.t + 1;
    let bc1 = 1.0 - h.beta1.powf(t as f64);
    let bc2 = 1.0 - h.beta2.powf(t as f64);
    for i in 0..params.len() {
        let m = h.beta1 * state.m[i] + (1.0 - h.beta1) * g[i];
        let v = h.beta2 * state.v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let update = (m / bc1) / ((v / bc2).sqrt() + h.eps) + h.weight_decay * params[i];
        state.m[i] = m;
        state.v[i] = v;
        params[i] -= h.lr * update;
    }
    state.t = t;
    Ok(())
}
