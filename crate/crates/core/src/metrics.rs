//! Evaluation metrics, training losses and heatmap utilities.
//!
//! Positions are meters internally; metric outputs ending in `_mm` are
//! converted to millimeters at this boundary. Root-relative means the wrist
//! keypoint (index 0) is subtracted, and MPJPE averages over the 20 non-root
//! keypoints.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::Keypoints2d;
use crate::error::{Error, Result};
use crate::hand_model::{
    HandModel, HandParams, Keypoints3d, Mesh, KP_INDEX_MCP, KP_MIDDLE_TIP, KP_RING_MCP, KP_WRIST,
    NUM_JOINTS, NUM_KEYPOINTS, NUM_SHAPE,
};
use crate::rotation::Rot6d;

pub const M_TO_MM: f64 = 1000.0;
pub const NORMAL_LOSS_WEIGHT: f64 = 0.1;
pub const BCE_CLAMP: f64 = 1e-7;
pub const DEFAULT_HEATMAP_SIZE: usize = 64;
pub const DEFAULT_HEATMAP_SIGMA: f64 = 2.0;
pub const DEFAULT_DECODE_THRESHOLD: f64 = 0.1;

pub fn mpjpe(pred: &Keypoints3d, gt: &Keypoints3d) -> f64 {
    let pr = pred.point(KP_WRIST);
    let gr = gt.point(KP_WRIST);
    let total: f64 = (1..NUM_KEYPOINTS)
        .map(|i| ((pred.point(i) - pr) - (gt.point(i) - gr)).norm())
        .sum();
    total / (NUM_KEYPOINTS - 1) as f64 * M_TO_MM
}

pub fn mpvpe(pred: &Mesh, gt: &Mesh, pred_root: &[f64; 3], gt_root: &[f64; 3]) -> Result<f64> {
    if pred.vertices.len() != gt.vertices.len() {
        return Err(Error::mismatch("mesh vertices", gt.vertices.len(), pred.vertices.len()));
    }
    if gt.vertices.is_empty() {
        return Err(Error::InvalidArgument("empty mesh".into()));
    }
    let pr = Vector3::from(*pred_root);
    let gr = Vector3::from(*gt_root);
    let total: f64 = pred
        .vertices
        .iter()
        .zip(&gt.vertices)
        .map(|(p, g)| ((Vector3::from(*p) - pr) - (Vector3::from(*g) - gr)).norm())
        .sum();
    Ok(total / gt.vertices.len() as f64 * M_TO_MM)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeErrors {
    pub mse_mano: f64,
    pub w_error_mm: f64,
    pub l_error_mm: f64,
}

/// Hand width (index MCP to ring MCP) and length (wrist to middle tip) at
/// the flat pose, in meters.
pub fn hand_width_length(model: &HandModel, shape: &[f64; NUM_SHAPE]) -> Result<(f64, f64)> {
    let kp = model.keypoints(&HandParams::with_shape(*shape))?;
    Ok((
        (kp.point(KP_INDEX_MCP) - kp.point(KP_RING_MCP)).norm(),
        (kp.point(KP_WRIST) - kp.point(KP_MIDDLE_TIP)).norm(),
    ))
}

pub fn mse_mano(beta_est: &[f64; NUM_SHAPE], beta_gt: &[f64; NUM_SHAPE]) -> f64 {
    beta_est
        .iter()
        .zip(beta_gt)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / NUM_SHAPE as f64
}

pub fn shape_errors(
    beta_est: &[f64; NUM_SHAPE],
    beta_gt: &[f64; NUM_SHAPE],
    model: &HandModel,
) -> Result<ShapeErrors> {
    let (we, le) = hand_width_length(model, beta_est)?;
    let (wg, lg) = hand_width_length(model, beta_gt)?;
    Ok(ShapeErrors {
        mse_mano: mse_mano(beta_est, beta_gt),
        w_error_mm: (we - wg).abs() * M_TO_MM,
        l_error_mm: (le - lg).abs() * M_TO_MM,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeshLosses {
    pub l_mesh: f64,
    pub l_norm: f64,
    pub l_edge: f64,
}

const FACE_EDGES: [(usize, usize, usize); 3] = [(0, 1, 2), (1, 2, 0), (2, 0, 1)];

/// Vertex L1, normal-consistency and edge-length losses against `gt`.
///
/// Normals come from the ground-truth faces (counterclockwise winding).
/// Predicted edges of zero length contribute nothing to the normal term.
pub fn mesh_losses(pred: &Mesh, gt: &Mesh) -> Result<MeshLosses> {
    if pred.vertices.len() != gt.vertices.len() {
        return Err(Error::mismatch("mesh vertices", gt.vertices.len(), pred.vertices.len()));
    }
    gt.validate()?;
    let l_mesh = pred
        .vertices
        .iter()
        .zip(&gt.vertices)
        .map(|(p, g)| (0..3).map(|c| (p[c] - g[c]).abs()).sum::<f64>())
        .sum();

    let mut l_norm = 0.0;
    let mut l_edge = 0.0;
    for (f, face) in gt.faces.iter().enumerate() {
        for (i, j, k) in FACE_EDGES {
            let (vi, vj, vk) = (face[i], face[j], face[k]);
            let gt_edge = gt.vertex(vj) - gt.vertex(vi);
            let gt_other = gt.vertex(vk) - gt.vertex(vi);
            let normal = gt_edge.cross(&gt_other);
            let area2 = normal.norm();
            if !(area2 > 1e-18) {
                return Err(Error::DegenerateFace(f));
            }
            let edge = pred.vertex(vj) - pred.vertex(vi);
            let len = edge.norm();
            // (e x u) . w equals e . (u x w) and vanishes exactly when e == u
            if len > 0.0 {
                l_norm += (edge.cross(&gt_edge).dot(&gt_other) / (len * area2)).abs();
            }
            l_edge += (len - gt_edge.norm()).abs();
        }
    }
    Ok(MeshLosses {
        l_mesh,
        l_norm,
        l_edge,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamLosses {
    pub l_pose: f64,
    pub l_shape: f64,
}

/// L1 losses on the raw 96-dim 6D pose and the 10-dim shape.
pub fn param_losses(
    pose_hat: &[Rot6d; NUM_JOINTS],
    pose_gt: &[Rot6d; NUM_JOINTS],
    shape_hat: &[f64; NUM_SHAPE],
    shape_gt: &[f64; NUM_SHAPE],
) -> ParamLosses {
    let l_pose = pose_hat
        .iter()
        .zip(pose_gt)
        .flat_map(|(a, b)| a.0.iter().zip(b.0).map(|(x, y)| (x - y).abs()))
        .sum();
    let l_shape = shape_hat.iter().zip(shape_gt).map(|(a, b)| (a - b).abs()).sum();
    ParamLosses { l_pose, l_shape }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub l_mesh: f64,
    pub l_norm: f64,
    pub l_edge: f64,
    pub l_pose: f64,
    pub l_shape: f64,
}

impl LossParts {
    pub fn from_parts(mesh: &MeshLosses, params: &ParamLosses) -> Self {
        LossParts {
            l_mesh: mesh.l_mesh,
            l_norm: mesh.l_norm,
            l_edge: mesh.l_edge,
            l_pose: params.l_pose,
            l_shape: params.l_shape,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Shape is regressed, so the shape loss is included.
    Baseline,
    /// Shape is given as identity input; no shape loss.
    IdentityAware,
}

pub fn total_loss(parts: &LossParts, variant: LossVariant) -> f64 {
    let common = parts.l_mesh + NORMAL_LOSS_WEIGHT * parts.l_norm + parts.l_edge + parts.l_pose;
    match variant {
        LossVariant::Baseline => common + parts.l_shape,
        LossVariant::IdentityAware => common,
    }
}

/// 21-channel heatmap, row-major per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Heatmap {
            height,
            width,
            data: vec![0.0; NUM_KEYPOINTS * height * width],
        }
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn at(&self, k: usize, row: usize, col: usize) -> f64 {
        self.channel(k)[row * self.width + col]
    }

    fn check(&self) -> Result<()> {
        let expect = NUM_KEYPOINTS * self.height * self.width;
        if self.data.len() != expect {
            return Err(Error::mismatch("heatmap data", expect, self.data.len()));
        }
        Ok(())
    }
}

/// Gaussian targets with unit peak. Invisible or off-image keypoints yield an
/// all-zero channel. Keypoint `(u, v)` maps to column `u`, row `v`.
pub fn heatmap_target(kp: &Keypoints2d, height: usize, width: usize, sigma: f64) -> Result<Heatmap> {
    kp.validate()?;
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
    }
    let mut hm = Heatmap::zeros(height, width);
    let denom = 2.0 * sigma * sigma;
    for k in 0..NUM_KEYPOINTS {
        let [u, v] = kp.points[k];
        let inside = u >= 0.0 && v >= 0.0 && u <= (width as f64 - 1.0) && v <= (height as f64 - 1.0);
        if !kp.visible[k] || !inside {
            continue;
        }
        let ch = hm.channel_mut(k);
        for row in 0..height {
            let dv = row as f64 - v;
            for col in 0..width {
                let du = col as f64 - u;
                ch[row * width + col] = (-(du * du + dv * dv) / denom).exp();
            }
        }
    }
    Ok(hm)
}

/// Mean binary cross entropy over all pixels and channels. Log arguments are
/// clamped to `[1e-7, 1]`, bounding the per-pixel loss by `-ln(1e-7)`.
pub fn heatmap_bce(pred: &Heatmap, gt: &Heatmap) -> Result<f64> {
    pred.check()?;
    gt.check()?;
    if pred.height != gt.height || pred.width != gt.width {
        return Err(Error::mismatch("heatmap size", gt.data.len(), pred.data.len()));
    }
    if pred.data.is_empty() {
        return Err(Error::InvalidArgument("empty heatmap".into()));
    }
    let total: f64 = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(&p, &g)| {
            let p = p.clamp(0.0, 1.0);
            let mut loss = 0.0;
            if g != 0.0 {
                loss -= g * p.max(BCE_CLAMP).ln();
            }
            if g != 1.0 {
                loss -= (1.0 - g) * (1.0 - p).max(BCE_CLAMP).ln();
            }
            loss
        })
        .sum();
    Ok(total / pred.data.len() as f64)
}

/// Per-channel argmax (first hit in row-major order wins ties). Returns the
/// keypoints, marked invisible when the peak is below `threshold`, and the
/// peak values.
pub fn heatmap_decode(hm: &Heatmap, threshold: f64) -> Result<(Keypoints2d, Vec<f64>)> {
    hm.check()?;
    let mut points = Vec::with_capacity(NUM_KEYPOINTS);
    let mut visible = Vec::with_capacity(NUM_KEYPOINTS);
    let mut peaks = Vec::with_capacity(NUM_KEYPOINTS);
    for k in 0..NUM_KEYPOINTS {
        let ch = hm.channel(k);
        let mut best = 0;
        for (i, v) in ch.iter().enumerate() {
            if *v > ch[best] {
                best = i;
            }
        }
        let peak = ch.get(best).copied().unwrap_or(0.0);
        points.push([(best % hm.width.max(1)) as f64, (best / hm.width.max(1)) as f64]);
        visible.push(peak >= threshold);
        peaks.push(peak);
    }
    Ok((Keypoints2d { points, visible }, peaks))
}

/// Metrics for one record; `None` where ground truth is missing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub record_id: String,
    pub mpjpe_mm: Option<f64>,
    pub mpvpe_mm: Option<f64>,
    pub mse_mano: Option<f64>,
    pub w_error_mm: Option<f64>,
    pub l_error_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe_mm: Option<f64>,
    pub mpvpe_mm: Option<f64>,
    pub mse_mano: Option<f64>,
    pub w_error_mm: Option<f64>,
    pub l_error_mm: Option<f64>,
    pub records: Vec<RecordMetrics>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    /// Means each metric over the records that have it.
    pub fn aggregate(mut records: Vec<RecordMetrics>) -> Self {
        records.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        EvalReport {
            mpjpe_mm: mean_of(records.iter().map(|r| r.mpjpe_mm)),
            mpvpe_mm: mean_of(records.iter().map(|r| r.mpvpe_mm)),
            mse_mano: mean_of(records.iter().map(|r| r.mse_mano)),
            w_error_mm: mean_of(records.iter().map(|r| r.w_error_mm)),
            l_error_mm: mean_of(records.iter().map(|r| r.l_error_mm)),
            records,
        }
    }
}
