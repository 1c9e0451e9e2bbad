//! Optimization-augmented inference: fit root translation and pose to 2D
//! keypoints by minimizing reprojection energy with the shape held fixed.
//!
//! The fit runs in two stages. Stage 1 moves only the root translation;
//! stage 2 moves the root and the 96 raw 6D pose coordinates jointly. Both
//! stages use Adam and keep the lowest-energy iterate they visit.

use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::adam::{adam_minimize, AdamConfig};
use crate::camera::{init_root, CameraIntrinsics, Keypoints2d, DEFAULT_Z_MIN};
use crate::error::{Error, Result};
use crate::gradcheck::{central_difference, relative_error};
use crate::hand_model::{HandModel, HandParams, ShapedHand, NUM_JOINTS, NUM_KEYPOINTS, NUM_SHAPE};
use crate::rotation::Rot6d;

pub const MIN_VISIBLE_FOR_FIT: usize = 4;
/// Finite-difference steps used by the gradient check.
pub const FD_STEP_ROOT: f64 = 1e-5;
pub const FD_STEP_POSE: f64 = 1e-6;
pub const GRAD_CHECK_TOL: f64 = 1e-4;

/// How the keypoint residuals are reduced to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyKind {
    /// Mean Euclidean pixel distance over visible keypoints.
    #[default]
    Mean,
    /// Sum of squared pixel residuals over visible keypoints.
    Sumsq,
}

/// Which parameters a gradient is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradBlock {
    /// `[r_x, r_y, r_z]`
    Root,
    /// `[r_x, r_y, r_z, θ_0 .. θ_95]`
    RootPose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub stage1_iters: usize,
    pub stage1_lr: f64,
    pub stage2_iters: usize,
    pub stage2_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_check: bool,
    pub energy: EnergyKind,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            stage1_iters: 200,
            stage1_lr: 1e-2,
            stage2_iters: 60,
            stage2_lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_check: false,
            energy: EnergyKind::Mean,
        }
    }
}

impl FitConfig {
    fn stage(&self, iters: usize, lr: f64) -> AdamConfig {
        AdamConfig {
            iters,
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            min_step: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stage(self.stage1_iters, self.stage1_lr).validate()?;
        self.stage(self.stage2_iters, self.stage2_lr).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: HandParams,
    pub energy_initial: f64,
    pub energy_final: f64,
    pub stage1_trace: Vec<f64>,
    pub stage2_trace: Vec<f64>,
}

/// Reprojection energy for one record with the shape fixed.
pub struct Reprojection<'a> {
    hand: ShapedHand<'a>,
    targets: Vec<(usize, Vector2<f64>)>,
    cam: CameraIntrinsics,
    kind: EnergyKind,
}

impl<'a> Reprojection<'a> {
    pub fn new(
        model: &'a HandModel,
        shape: &[f64; NUM_SHAPE],
        x_d: &Keypoints2d,
        cam: &CameraIntrinsics,
        kind: EnergyKind,
    ) -> Result<Self> {
        x_d.validate()?;
        cam.validate()?;
        let targets: Vec<_> = x_d.visible_indices().map(|i| (i, x_d.point(i))).collect();
        if targets.is_empty() {
            return Err(Error::TooFewKeypoints("no visible keypoints".into()));
        }
        Ok(Reprojection {
            hand: model.shaped(shape),
            targets,
            cam: *cam,
            kind,
        })
    }

    pub fn num_visible(&self) -> usize {
        self.targets.len()
    }

    pub fn energy(&self, pose: &[Rot6d; NUM_JOINTS], root: &[f64; 3]) -> Result<f64> {
        self.evaluate(pose, root, None)
    }

    /// Energy and gradient over `[root, pose]` (99 entries).
    pub fn energy_and_grad(&self, pose: &[Rot6d; NUM_JOINTS], root: &[f64; 3]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; 3 + 6 * NUM_JOINTS];
        let e = self.evaluate(pose, root, Some(&mut grad))?;
        Ok((e, grad))
    }

    fn evaluate(
        &self,
        pose: &[Rot6d; NUM_JOINTS],
        root: &[f64; 3],
        grad: Option<&mut Vec<f64>>,
    ) -> Result<f64> {
        let state = self.hand.pose(pose)?;
        let kp = self.hand.keypoints_at(&state, root);
        let n = self.targets.len() as f64;
        let mut energy = 0.0;
        let mut kp_grad = [Vector3::zeros(); NUM_KEYPOINTS];
        let want_grad = grad.is_some();
        for &(i, target) in &self.targets {
            let p = kp.point(i);
            if !(p.z > DEFAULT_Z_MIN) {
                return Err(Error::BehindCamera(i));
            }
            let res = self.cam.project_point(&p) - target;
            let dres = match self.kind {
                EnergyKind::Mean => {
                    let d = res.norm();
                    energy += d / n;
                    if d > 0.0 {
                        res / (d * n)
                    } else {
                        Vector2::zeros()
                    }
                }
                EnergyKind::Sumsq => {
                    energy += res.norm_squared();
                    res * 2.0
                }
            };
            if want_grad {
                let iz = 1.0 / p.z;
                let jac = Matrix2x3::new(
                    self.cam.fx * iz,
                    0.0,
                    -self.cam.fx * p.x * iz * iz,
                    0.0,
                    self.cam.fy * iz,
                    -self.cam.fy * p.y * iz * iz,
                );
                kp_grad[i] = jac.transpose() * dres;
            }
        }
        if let Some(out) = grad {
            let root_grad: Vector3<f64> = kp_grad.iter().sum();
            out[..3].copy_from_slice(root_grad.as_slice());
            if out.len() > 3 {
                let pose_grad = self.hand.keypoints_vjp(&state, &kp_grad);
                out[3..].copy_from_slice(&pose_grad);
            }
        }
        Ok(energy)
    }
}

/// Reprojection energy of `params` against `x_d`.
pub fn energy(
    params: &HandParams,
    x_d: &Keypoints2d,
    model: &HandModel,
    cam: &CameraIntrinsics,
    kind: EnergyKind,
) -> Result<f64> {
    Reprojection::new(model, &params.shape, x_d, cam, kind)?.energy(&params.pose, &params.root)
}

/// Gradient of [`energy`] with respect to the selected block.
pub fn energy_grad(
    params: &HandParams,
    x_d: &Keypoints2d,
    model: &HandModel,
    cam: &CameraIntrinsics,
    kind: EnergyKind,
    wrt: GradBlock,
) -> Result<Vec<f64>> {
    let problem = Reprojection::new(model, &params.shape, x_d, cam, kind)?;
    let (_, mut g) = problem.energy_and_grad(&params.pose, &params.root)?;
    if wrt == GradBlock::Root {
        g.truncate(3);
    }
    Ok(g)
}

/// Central-difference gradient of [`energy`]; the independent reference for
/// [`energy_grad`].
pub fn energy_grad_fd(
    params: &HandParams,
    x_d: &Keypoints2d,
    model: &HandModel,
    cam: &CameraIntrinsics,
    kind: EnergyKind,
    wrt: GradBlock,
) -> Result<Vec<f64>> {
    let problem = Reprojection::new(model, &params.shape, x_d, cam, kind)?;
    let x = pack(params, wrt);
    let steps: Vec<f64> = (0..x.len())
        .map(|i| if i < 3 { FD_STEP_ROOT } else { FD_STEP_POSE })
        .collect();
    central_difference(
        |v| {
            let p = unpack(params, v);
            problem.energy(&p.pose, &p.root)
        },
        &x,
        &steps,
    )
}

fn pack(params: &HandParams, wrt: GradBlock) -> Vec<f64> {
    let mut x = params.root.to_vec();
    if wrt == GradBlock::RootPose {
        x.extend_from_slice(&params.pose_flat());
    }
    x
}

fn unpack(base: &HandParams, x: &[f64]) -> HandParams {
    let mut p = *base;
    p.root.copy_from_slice(&x[..3]);
    if x.len() > 3 {
        p.set_pose_flat(&x[3..]);
    }
    p
}

/// Starting parameters for a fit; when `root` is unknown it is estimated
/// with [`init_root`].
pub fn initial_params(
    shape: [f64; NUM_SHAPE],
    pose: [Rot6d; NUM_JOINTS],
    root: Option<[f64; 3]>,
    x_d: &Keypoints2d,
    model: &HandModel,
    cam: &CameraIntrinsics,
) -> Result<HandParams> {
    let root = match root {
        Some(r) => r,
        None => init_root(x_d, model, &shape, cam)?,
    };
    Ok(HandParams { shape, pose, root })
}

fn check_gradient(problem: &Reprojection<'_>, params: &HandParams, wrt: GradBlock) -> Result<()> {
    let (_, mut analytic) = problem.energy_and_grad(&params.pose, &params.root)?;
    if wrt == GradBlock::Root {
        analytic.truncate(3);
    }
    let x = pack(params, wrt);
    let steps: Vec<f64> = (0..x.len())
        .map(|i| if i < 3 { FD_STEP_ROOT } else { FD_STEP_POSE })
        .collect();
    let fd = central_difference(
        |v| {
            let p = unpack(params, v);
            problem.energy(&p.pose, &p.root)
        },
        &x,
        &steps,
    )?;
    let rel = relative_error(&analytic, &fd);
    if rel > GRAD_CHECK_TOL {
        return Err(Error::GradientCheck {
            rel_error: rel,
            tolerance: GRAD_CHECK_TOL,
        });
    }
    Ok(())
}

/// Two-stage fit. The shape in `init` is never modified.
pub fn fit_two_stage(
    init: &HandParams,
    x_d: &Keypoints2d,
    model: &HandModel,
    cam: &CameraIntrinsics,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    init.validate()?;
    let problem = Reprojection::new(model, &init.shape, x_d, cam, cfg.energy)?;
    if problem.num_visible() < MIN_VISIBLE_FOR_FIT {
        return Err(Error::InfeasibleStart(format!(
            "{} visible keypoints, need at least {MIN_VISIBLE_FOR_FIT}",
            problem.num_visible()
        )));
    }
    let energy_initial = match problem.energy(&init.pose, &init.root) {
        Ok(e) if e.is_finite() => e,
        Ok(e) => return Err(Error::InfeasibleStart(format!("initial energy is {e}"))),
        Err(Error::BehindCamera(i)) => {
            return Err(Error::InfeasibleStart(format!("keypoint {i} is behind the camera")))
        }
        Err(e) => return Err(e),
    };

    // Iterates that leave the valid region score +inf and contribute no gradient.
    let objective = |p: &HandParams, block: GradBlock| -> Result<(f64, Vec<f64>)> {
        match problem.energy_and_grad(&p.pose, &p.root) {
            Ok((e, mut g)) => {
                if block == GradBlock::Root {
                    g.truncate(3);
                }
                Ok((e, g))
            }
            Err(Error::BehindCamera(_)) | Err(Error::DegenerateRot6d(_)) => {
                let n = if block == GradBlock::Root { 3 } else { 3 + 6 * NUM_JOINTS };
                Ok((f64::INFINITY, vec![0.0; n]))
            }
            Err(e) => Err(e),
        }
    };

    if cfg.grad_check {
        check_gradient(&problem, init, GradBlock::Root)?;
    }
    let stage1 = adam_minimize(
        |x| objective(&unpack(init, x), GradBlock::Root),
        &pack(init, GradBlock::Root),
        &cfg.stage(cfg.stage1_iters, cfg.stage1_lr),
    )?;
    let after1 = unpack(init, &stage1.best_x);

    if cfg.grad_check {
        check_gradient(&problem, &after1, GradBlock::RootPose)?;
    }
    let stage2 = adam_minimize(
        |x| objective(&unpack(&after1, x), GradBlock::RootPose),
        &pack(&after1, GradBlock::RootPose),
        &cfg.stage(cfg.stage2_iters, cfg.stage2_lr),
    )?;
    let params = unpack(&after1, &stage2.best_x);

    Ok(FitResult {
        params,
        energy_initial,
        energy_final: stage2.best_f,
        stage1_trace: stage1.trace,
        stage2_trace: stage2.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project;
    use crate::rotation::RotMat;
    use crate::toy::synth_toy_model;

    fn setup() -> (HandModel, CameraIntrinsics, HandParams, Keypoints2d) {
        let m = synth_toy_model(0, 3);
        let cam = CameraIntrinsics::new(500.0, 500.0, 128.0, 128.0).unwrap();
        let mut p = HandParams::default();
        p.pose[0] = RotMat::rot_z(0.3).to_rot6d();
        p.pose[2] = Rot6d([0.95, 0.2, 0.1, -0.1, 0.9, 0.3]);
        p.root = [0.01, -0.05, 0.6];
        let kp = m.keypoints(&p).unwrap();
        let x_d = Keypoints2d::new(project(&kp.0, &cam).unwrap());
        (m, cam, p, x_d)
    }

    #[test]
    fn exact_record_has_zero_energy() {
        let (m, cam, p, x_d) = setup();
        assert_eq!(energy(&p, &x_d, &m, &cam, EnergyKind::Mean).unwrap(), 0.0);
        let g = energy_grad(&p, &x_d, &m, &cam, EnergyKind::Mean, GradBlock::RootPose).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
    }

    #[test]
    fn uniform_offset_gives_its_length() {
        let (m, cam, p, mut x_d) = setup();
        for q in &mut x_d.points {
            q[0] += 3.0;
            q[1] += 4.0;
        }
        let e = energy(&p, &x_d, &m, &cam, EnergyKind::Mean).unwrap();
        assert!((e - 5.0).abs() < 1e-9, "{e}");
        let e = energy(&p, &x_d, &m, &cam, EnergyKind::Sumsq).unwrap();
        assert!((e - 21.0 * 25.0).abs() < 1e-6, "{e}");
    }

    #[test]
    fn shift_right_pulls_root_right() {
        let (m, cam, p, mut x_d) = setup();
        for q in &mut x_d.points {
            q[0] += 4.0;
        }
        let g = energy_grad(&p, &x_d, &m, &cam, EnergyKind::Mean, GradBlock::Root).unwrap();
        let fd = energy_grad_fd(&p, &x_d, &m, &cam, EnergyKind::Mean, GradBlock::Root).unwrap();
        assert!(g[0] < 0.0 && fd[0] < 0.0);
    }

    #[test]
    fn invisible_points_are_ignored() {
        let (m, cam, p, mut x_d) = setup();
        x_d.points[7] = [1e6, -1e6];
        x_d.visible[7] = false;
        assert_eq!(energy(&p, &x_d, &m, &cam, EnergyKind::Mean).unwrap(), 0.0);
        x_d.visible = vec![false; 21];
        x_d.visible[..3].iter_mut().for_each(|v| *v = true);
        let err = fit_two_stage(&p, &x_d, &m, &cam, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InfeasibleStart(_)));
    }

    #[test]
    fn behind_camera_start_is_infeasible() {
        let (m, cam, mut p, x_d) = setup();
        p.root[2] = -1.0;
        assert!(matches!(
            energy(&p, &x_d, &m, &cam, EnergyKind::Mean),
            Err(Error::BehindCamera(_))
        ));
        assert!(matches!(
            fit_two_stage(&p, &x_d, &m, &cam, &FitConfig::default()),
            Err(Error::InfeasibleStart(_))
        ));
    }

    #[test]
    fn zero_iterations_return_init() {
        let (m, cam, mut p, x_d) = setup();
        p.root[0] += 0.02;
        let cfg = FitConfig {
            stage1_iters: 0,
            stage2_iters: 0,
            ..Default::default()
        };
        let r = fit_two_stage(&p, &x_d, &m, &cam, &cfg).unwrap();
        assert_eq!(r.params, p);
        assert_eq!(r.energy_final, r.energy_initial);
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let (m, cam, p, x_d) = setup();
        let r = fit_two_stage(&p, &x_d, &m, &cam, &FitConfig::default()).unwrap();
        assert_eq!(r.energy_final, 0.0);
        assert_eq!(r.params, p);
    }

    #[test]
    fn grad_check_flag_passes_on_valid_problem() {
        let (m, cam, mut p, x_d) = setup();
        p.root[1] += 0.01;
        let cfg = FitConfig {
            grad_check: true,
            stage1_iters: 5,
            stage2_iters: 5,
            ..Default::default()
        };
        let r = fit_two_stage(&p, &x_d, &m, &cam, &cfg).unwrap();
        assert!(r.energy_final <= r.energy_initial);
        assert_eq!(r.params.shape, p.shape);
    }
}
