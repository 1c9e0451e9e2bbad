//! Shape personalization for an unseen subject.
//!
//! Each of K images contributes a predicted shape `β̂_k`, pose `θ̂_k` and a
//! confidence `c_k`. Confidences become attention weights through a softmax
//! with temperature; the shared shape `β̃` then minimizes
//!
//! ```text
//! Σ_k w_k · ‖M(β̃, θ̂_k) − M(β̂_k, θ̂_k)‖_F²
//! ```
//!
//! over the V×3 vertex differences. For a fixed pose the posed mesh is affine
//! in the shape, so each image is reduced to an offset and a V·3×10 shape
//! Jacobian once, and the descent loop only does small dense products.

use serde::{Deserialize, Serialize};

use crate::adam::{adam_minimize, AdamConfig};
use crate::error::{Error, Result};
use crate::hand_model::{HandModel, HandParams, Mesh, NUM_JOINTS, NUM_SHAPE};
use crate::rotation::Rot6d;

pub const DEFAULT_TEMPERATURE: f64 = 0.33;
pub const DEFAULT_MARGIN: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CalibrationMode {
    Attention { temperature: f64 },
    Uniform,
}

impl Default for CalibrationMode {
    fn default() -> Self {
        CalibrationMode::Attention {
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

/// One image's prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub shape_hat: [f64; NUM_SHAPE],
    pub pose_hat: [Rot6d; NUM_JOINTS],
    pub confidence: Option<f64>,
}

/// All predictions for one subject.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SubjectBundle {
    pub entries: Vec<BundleEntry>,
}

impl SubjectBundle {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidArgument("bundle needs at least one record".into()));
        }
        for (k, e) in self.entries.iter().enumerate() {
            if !e.shape_hat.iter().all(|v| v.is_finite()) || e.confidence.is_some_and(|c| !c.is_finite()) {
                return Err(Error::InvalidArgument(format!("record {k} has non-finite values")));
            }
        }
        Ok(())
    }
}

/// Descent schedule: a coarse stage then a fine stage, each stopping early
/// once a step is shorter than `min_step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub stage1_iters: usize,
    pub stage1_lr: f64,
    pub stage2_iters: usize,
    pub stage2_lr: f64,
    pub min_step: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            stage1_iters: 300,
            stage1_lr: 1e-2,
            stage2_iters: 100,
            stage2_lr: 1e-3,
            min_step: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub shape: [f64; NUM_SHAPE],
    pub weights: Vec<f64>,
    /// Objective at `shape`, in m².
    pub objective_final: f64,
    pub iterations: usize,
}

/// Softmax of `c / temperature`, evaluated with max-subtraction.
pub fn attention_weights(c: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    if c.is_empty() {
        return Err(Error::InvalidArgument("no confidences".into()));
    }
    if !c.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite confidence".into()));
    }
    let max = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = c.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let sum: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / sum).collect())
}

pub fn uniform_weights(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Per-image weights for a bundle under `mode`.
pub fn bundle_weights(bundle: &SubjectBundle, mode: &CalibrationMode) -> Result<Vec<f64>> {
    match mode {
        CalibrationMode::Uniform => Ok(uniform_weights(bundle.entries.len())),
        CalibrationMode::Attention { temperature } => {
            let c = bundle
                .entries
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    e.confidence.ok_or_else(|| {
                        Error::InvalidArgument(format!("confidence required for attention mode (record {k})"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            attention_weights(&c, *temperature)
        }
    }
}

fn flat(mesh: &Mesh) -> Vec<f64> {
    mesh.vertices.iter().flatten().copied().collect()
}

struct ImageTerm {
    weight: f64,
    /// `M(0, θ̂_k) − M(β̂_k, θ̂_k)`
    offset: Vec<f64>,
    /// Columns `M(e_s, θ̂_k) − M(0, θ̂_k)`.
    jacobian: Vec<Vec<f64>>,
}

/// The weighted calibration objective for one bundle.
pub struct CalibrationObjective {
    terms: Vec<ImageTerm>,
}

impl CalibrationObjective {
    pub fn new(bundle: &SubjectBundle, model: &HandModel, weights: &[f64]) -> Result<Self> {
        bundle.validate()?;
        if weights.len() != bundle.entries.len() {
            return Err(Error::mismatch("weights", bundle.entries.len(), weights.len()));
        }
        let mesh = |shape: [f64; NUM_SHAPE], pose: [Rot6d; NUM_JOINTS]| -> Result<Vec<f64>> {
            let (m, _) = model.forward(&HandParams {
                shape,
                pose,
                root: [0.0; 3],
            })?;
            Ok(flat(&m))
        };
        let mut terms = Vec::with_capacity(weights.len());
        for (e, &w) in bundle.entries.iter().zip(weights) {
            let target = mesh(e.shape_hat, e.pose_hat)?;
            let base = mesh([0.0; NUM_SHAPE], e.pose_hat)?;
            let mut jacobian = Vec::with_capacity(NUM_SHAPE);
            for s in 0..NUM_SHAPE {
                let mut unit = [0.0; NUM_SHAPE];
                unit[s] = 1.0;
                let col = mesh(unit, e.pose_hat)?;
                jacobian.push(col.iter().zip(&base).map(|(a, b)| a - b).collect());
            }
            let offset = base.iter().zip(&target).map(|(a, b)| a - b).collect();
            terms.push(ImageTerm {
                weight: w,
                offset,
                jacobian,
            });
        }
        Ok(CalibrationObjective { terms })
    }

    /// Objective (m²) and its gradient with respect to the shared shape.
    pub fn value_and_grad(&self, shape: &[f64]) -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let mut grad = vec![0.0; NUM_SHAPE];
        let mut res = Vec::new();
        for t in &self.terms {
            res.clear();
            res.extend_from_slice(&t.offset);
            for (b, col) in shape.iter().zip(&t.jacobian) {
                for (r, c) in res.iter_mut().zip(col) {
                    *r += b * c;
                }
            }
            value += t.weight * res.iter().map(|r| r * r).sum::<f64>();
            for (g, col) in grad.iter_mut().zip(&t.jacobian) {
                *g += 2.0 * t.weight * col.iter().zip(&res).map(|(c, r)| c * r).sum::<f64>();
            }
        }
        (value, grad)
    }

    pub fn value(&self, shape: &[f64]) -> f64 {
        self.value_and_grad(shape).0
    }
}

/// Calibrates one subject with the default schedule.
pub fn calibrate_shape(
    bundle: &SubjectBundle,
    model: &HandModel,
    mode: &CalibrationMode,
) -> Result<CalibrationResult> {
    calibrate_shape_with(bundle, model, mode, &CalibrationConfig::default())
}

pub fn calibrate_shape_with(
    bundle: &SubjectBundle,
    model: &HandModel,
    mode: &CalibrationMode,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    bundle.validate()?;
    let weights = bundle_weights(bundle, mode)?;
    let objective = CalibrationObjective::new(bundle, model, &weights)?;

    let mut init = [0.0; NUM_SHAPE];
    for (e, w) in bundle.entries.iter().zip(&weights) {
        for (i, b) in init.iter_mut().zip(&e.shape_hat) {
            *i += w * b;
        }
    }

    let mut x = init.to_vec();
    let mut iterations = 0;
    for (iters, lr) in [(cfg.stage1_iters, cfg.stage1_lr), (cfg.stage2_iters, cfg.stage2_lr)] {
        let adam = AdamConfig {
            min_step: Some(cfg.min_step),
            ..AdamConfig::new(iters, lr)
        };
        let out = adam_minimize(|b| Ok(objective.value_and_grad(b)), &x, &adam)?;
        iterations += out.steps;
        x = out.best_x;
    }
    let shape: [f64; NUM_SHAPE] = x.try_into().unwrap();
    Ok(CalibrationResult {
        shape,
        objective_final: objective.value(&shape),
        weights,
        iterations,
    })
}

/// `Σ_s |β_s − β̂_s|`
pub fn shape_l1_error(shape_gt: &[f64; NUM_SHAPE], shape_hat: &[f64; NUM_SHAPE]) -> f64 {
    shape_gt.iter().zip(shape_hat).map(|(a, b)| (a - b).abs()).sum()
}

/// Total margin ranking loss over all unordered pairs.
///
/// A pair with `l_i < l_j` wants `c_i > c_j`; it costs
/// `max(0, −y·(c_i − c_j) + margin)` with `y = ±1`. Tied errors are skipped.
pub fn ranking_pairs(confidences: &[f64], shape_errors: &[f64], margin: f64) -> Result<f64> {
    if confidences.len() != shape_errors.len() {
        return Err(Error::mismatch("shape_errors", confidences.len(), shape_errors.len()));
    }
    if confidences.len() < 2 {
        return Err(Error::InvalidArgument("ranking loss needs at least two samples".into()));
    }
    if !(margin >= 0.0) {
        return Err(Error::InvalidArgument(format!("margin must be >= 0, got {margin}")));
    }
    let n = confidences.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (li, lj) = (shape_errors[i], shape_errors[j]);
            if li == lj {
                continue;
            }
            let y = if li < lj { 1.0 } else { -1.0 };
            total += (-y * (confidences[i] - confidences[j]) + margin).max(0.0);
        }
    }
    Ok(total)
}
