//! Seeded synthetic subjects and per-image predictions.
//!
//! Each subject gets a true shape. Each record gets a random valid pose and a
//! root in front of the camera. Keypoints are projected from the true
//! parameters, then perturbed to imitate a detector and a regressor:
//!
//! - `x_d` receives isotropic pixel noise of `noise_px`.
//! - `pose_hat` rotates every joint by `pose_noise_deg` about a random axis.
//! - `root_hat` moves the root by `root_noise_m` in a random direction.
//! - `shape_hat = shape + s_k * N(0, shape_noise²)`, where the per-record scale
//!   `s_k = sqrt(3) * U(0, 1)` has unit mean square. Records therefore differ
//!   in quality while the mean squared shape error stays `shape_noise²`.
//! - `confidence = -|shape_hat - shape|_1 + N(0, confidence_noise²)`, so the
//!   confidence is anti-correlated with the shape error.

use std::collections::BTreeMap;

use nalgebra::{Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::camera::{project, CameraIntrinsics, Keypoints2d};
use crate::error::{Error, Result};
use crate::hand_model::{HandModel, HandParams, Keypoints3d, Mesh, NUM_JOINTS, NUM_SHAPE};
use crate::personalization::{BundleEntry, SubjectBundle};
use crate::records::{GroundTruthRecord, PredictionRecord};
use crate::rotation::{axis_angle_to_matrix, AxisAngle, RotMat, Rot6d};
use crate::toy::synth_toy_model;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_subjects: usize,
    pub records_per_subject: usize,
    pub noise_px: f64,
    pub shape_noise: f64,
    pub pose_noise_deg: f64,
    pub root_noise_m: f64,
    pub confidence_noise: f64,
    /// Standard deviation of each true shape coefficient.
    pub shape_spread: f64,
    /// Largest per-joint angle of the true pose, in radians.
    pub max_joint_angle: f64,
    /// Largest global rotation of the true pose, in radians.
    pub max_global_angle: f64,
    pub v_per_segment: usize,
    pub camera: CameraIntrinsics,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_subjects: 1,
            records_per_subject: 20,
            noise_px: 0.0,
            shape_noise: 0.5,
            pose_noise_deg: 5.0,
            root_noise_m: 0.02,
            confidence_noise: 0.05,
            shape_spread: 0.5,
            max_joint_angle: 0.5,
            max_global_angle: 0.5,
            v_per_segment: 3,
            camera: CameraIntrinsics {
                fx: 500.0,
                fy: 500.0,
                cx: 128.0,
                cy: 128.0,
            },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let nonneg = [
            ("noise_px", self.noise_px),
            ("shape_noise", self.shape_noise),
            ("pose_noise_deg", self.pose_noise_deg),
            ("root_noise_m", self.root_noise_m),
            ("confidence_noise", self.confidence_noise),
            ("shape_spread", self.shape_spread),
            ("max_joint_angle", self.max_joint_angle),
            ("max_global_angle", self.max_global_angle),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub record_id: String,
    pub subject_id: String,
    pub truth: HandParams,
    pub keypoints_3d: Keypoints3d,
    pub mesh: Mesh,
    pub keypoints_2d: Keypoints2d,
    pub shape_hat: [f64; NUM_SHAPE],
    pub pose_hat: [Rot6d; NUM_JOINTS],
    pub root_hat: [f64; 3],
    pub confidence: f64,
}

impl SynthRecord {
    /// Prediction-file entry; `mesh_path` is stored as the mesh reference.
    pub fn prediction(&self, mesh_path: Option<String>) -> PredictionRecord {
        PredictionRecord {
            record_id: self.record_id.clone(),
            subject_id: self.subject_id.clone(),
            shape_hat: self.shape_hat,
            pose_hat: self.pose_hat,
            root_hat: Some(self.root_hat),
            confidence: Some(self.confidence),
            keypoints_2d: self.keypoints_2d.clone(),
            keypoints_3d_gt: Some(self.keypoints_3d),
            shape_gt: Some(self.truth.shape),
            mesh_gt: mesh_path,
        }
    }

    pub fn ground_truth(&self, mesh_path: Option<String>) -> GroundTruthRecord {
        GroundTruthRecord {
            record_id: self.record_id.clone(),
            subject_id: self.subject_id.clone(),
            params: self.truth,
            keypoints_3d: self.keypoints_3d,
            mesh: mesh_path,
        }
    }

    /// The perturbed starting point a fit would begin from.
    pub fn initial_params(&self) -> HandParams {
        HandParams {
            shape: self.truth.shape,
            pose: self.pose_hat,
            root: self.root_hat,
        }
    }

    pub fn bundle_entry(&self) -> BundleEntry {
        BundleEntry {
            shape_hat: self.shape_hat,
            pose_hat: self.pose_hat,
            confidence: Some(self.confidence),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub model: HandModel,
    pub camera: CameraIntrinsics,
    pub subjects: BTreeMap<String, [f64; NUM_SHAPE]>,
    /// Sorted by record id; subjects are contiguous.
    pub records: Vec<SynthRecord>,
}

impl SynthDataset {
    pub fn bundle(&self, subject_id: &str) -> SubjectBundle {
        SubjectBundle {
            entries: self
                .records
                .iter()
                .filter(|r| r.subject_id == subject_id)
                .map(SynthRecord::bundle_entry)
                .collect(),
        }
    }
}

pub fn subject_id(i: usize) -> String {
    format!("subject-{i:03}")
}

pub fn record_id(subject: usize, k: usize) -> String {
    format!("s{subject:03}-r{k:04}")
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        if v.norm() > 1e-6 {
            return Unit::new_normalize(v);
        }
    }
}

/// Rotation by a random angle in `[0, max_angle]` about a uniform random axis.
pub fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> RotMat {
    let angle = rng.random_range(0.0..=max_angle);
    fixed_angle_rotation(rng, angle)
}

/// Rotation by exactly `angle` about a uniform random axis.
pub fn fixed_angle_rotation(rng: &mut ChaCha8Rng, angle: f64) -> RotMat {
    let axis = unit_vector(rng);
    axis_angle_to_matrix(&AxisAngle(axis.into_inner() * angle))
}

pub fn random_pose(rng: &mut ChaCha8Rng, max_global_angle: f64, max_joint_angle: f64) -> [Rot6d; NUM_JOINTS] {
    std::array::from_fn(|j| {
        let max = if j == 0 { max_global_angle } else { max_joint_angle };
        random_rotation(rng, max).to_rot6d()
    })
}

/// Rotates every joint by `angle` about an independent random axis.
pub fn perturb_pose(rng: &mut ChaCha8Rng, pose: &[Rot6d; NUM_JOINTS], angle: f64) -> Result<[Rot6d; NUM_JOINTS]> {
    let mut out = *pose;
    for p in &mut out {
        let delta = fixed_angle_rotation(rng, angle);
        *p = delta.mul(&p.to_matrix()?).to_rot6d();
    }
    Ok(out)
}

/// Moves `root` by exactly `dist` in a random direction.
pub fn perturb_root(rng: &mut ChaCha8Rng, root: &[f64; 3], dist: f64) -> [f64; 3] {
    let d = unit_vector(rng).into_inner() * dist;
    [root[0] + d.x, root[1] + d.y, root[2] + d.z]
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma is finite and positive").sample(rng)
}

/// Generates the toy model and all subjects and records for `cfg`.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let model = synth_toy_model(cfg.seed, cfg.v_per_segment);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let mut subjects = BTreeMap::new();
    let mut records = Vec::with_capacity(cfg.n_subjects * cfg.records_per_subject);

    for s in 0..cfg.n_subjects {
        let sid = subject_id(s);
        let shape: [f64; NUM_SHAPE] = std::array::from_fn(|_| gaussian(&mut rng, cfg.shape_spread));
        subjects.insert(sid.clone(), shape);
        let shaped = model.shaped(&shape);

        for k in 0..cfg.records_per_subject {
            let pose = random_pose(&mut rng, cfg.max_global_angle, cfg.max_joint_angle);
            let root = [
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.12..-0.02),
                rng.random_range(0.5..0.7),
            ];
            let truth = HandParams { shape, pose, root };
            let state = shaped.pose(&pose)?;
            let keypoints_3d = shaped.keypoints_at(&state, &root);
            let mesh = shaped.mesh_at(&state, &root);
            let mut points = project(&keypoints_3d.0, &cfg.camera)?;
            for p in &mut points {
                p[0] += gaussian(&mut rng, cfg.noise_px);
                p[1] += gaussian(&mut rng, cfg.noise_px);
            }

            let pose_hat = perturb_pose(&mut rng, &pose, cfg.pose_noise_deg.to_radians())?;
            let root_hat = perturb_root(&mut rng, &root, cfg.root_noise_m);
            let scale = 3f64.sqrt() * rng.random::<f64>();
            let shape_hat: [f64; NUM_SHAPE] =
                std::array::from_fn(|i| shape[i] + scale * gaussian(&mut rng, cfg.shape_noise));
            let l1: f64 = shape_hat.iter().zip(&shape).map(|(a, b)| (a - b).abs()).sum();
            let confidence = -l1 + gaussian(&mut rng, cfg.confidence_noise);

            records.push(SynthRecord {
                record_id: record_id(s, k),
                subject_id: sid.clone(),
                truth,
                keypoints_3d,
                mesh,
                keypoints_2d: Keypoints2d::new(points),
                shape_hat,
                pose_hat,
                root_hat,
                confidence,
            });
        }
    }
    Ok(SynthDataset {
        model,
        camera: cfg.camera,
        subjects,
        records,
    })
}
