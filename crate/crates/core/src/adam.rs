//! Bias-corrected Adam with best-iterate tracking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub iters: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Stop once a step moves the iterate less than this (Euclidean norm).
    pub min_step: Option<f64>,
}

impl AdamConfig {
    pub fn new(iters: usize, lr: f64) -> Self {
        AdamConfig {
            iters,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            min_step: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("eps must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamOutcome {
    /// Last iterate.
    pub x: Vec<f64>,
    /// Lowest-objective iterate seen, including the start point.
    pub best_x: Vec<f64>,
    pub best_f: f64,
    /// Objective at the start and after every step.
    pub trace: Vec<f64>,
    pub steps: usize,
}

/// Minimizes `f`, which returns the objective and its gradient.
pub fn adam_minimize<F>(mut f: F, init: &[f64], cfg: &AdamConfig) -> Result<AdamOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let n = init.len();
    let mut x = init.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];

    let (mut fx, mut g) = f(&x)?;
    let mut trace = vec![fx];
    let mut best_x = x.clone();
    let mut best_f = fx;
    let mut steps = 0;

    for t in 1..=cfg.iters {
        if g.len() != n {
            return Err(Error::mismatch("gradient", n, g.len()));
        }
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        let mut step_sq = 0.0;
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let step = cfg.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
            x[i] -= step;
            step_sq += step * step;
        }
        steps = t;
        (fx, g) = f(&x)?;
        trace.push(fx);
        if fx < best_f {
            best_f = fx;
            best_x.copy_from_slice(&x);
        }
        if cfg.min_step.is_some_and(|tol| step_sq.sqrt() < tol) {
            break;
        }
    }
    Ok(AdamOutcome {
        x,
        best_x,
        best_f,
        trace,
        steps,
    })
}
