//! Python bindings. Arrays cross the boundary as nested lists: poses are
//! 16 lists of 6 floats, points are lists of `[x, y, z]` or `[u, v]`, and
//! cameras are `(fx, fy, cx, cy)` tuples.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use idhand::camera::{project as project_points, CameraIntrinsics, Keypoints2d};
use idhand::fit::{energy as reprojection_energy, fit_two_stage as fit_core, EnergyKind, FitConfig};
use idhand::hand_model::{HandParams, Keypoints3d, Mesh, NUM_JOINTS, NUM_KEYPOINTS, NUM_SHAPE};
use idhand::metrics::{self, LossParts, LossVariant};
use idhand::personalization::{self, BundleEntry, CalibrationMode, SubjectBundle};
use idhand::rotation::{self, AxisAngle, Rot6d, RotMat};
use idhand::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn fixed<const N: usize>(v: &[f64], what: &str) -> PyResult<[f64; N]> {
    v.try_into()
        .map_err(|_| PyValueError::new_err(format!("{what}: expected {N} values, got {}", v.len())))
}

fn shape_arg(v: &[f64]) -> PyResult<[f64; NUM_SHAPE]> {
    fixed(v, "shape")
}

fn pose_arg(pose: &[Vec<f64>]) -> PyResult<[Rot6d; NUM_JOINTS]> {
    if pose.len() != NUM_JOINTS {
        return Err(PyValueError::new_err(format!("pose: expected {NUM_JOINTS} rows, got {}", pose.len())));
    }
    let mut out = [Rot6d::IDENTITY; NUM_JOINTS];
    for (o, row) in out.iter_mut().zip(pose) {
        *o = Rot6d(fixed(row, "pose row")?);
    }
    Ok(out)
}

fn pose_out(pose: &[Rot6d; NUM_JOINTS]) -> Vec<Vec<f64>> {
    pose.iter().map(|r| r.0.to_vec()).collect()
}

fn keypoints3d_arg(points: &[Vec<f64>]) -> PyResult<Keypoints3d> {
    if points.len() != NUM_KEYPOINTS {
        return Err(PyValueError::new_err(format!("expected {NUM_KEYPOINTS} keypoints, got {}", points.len())));
    }
    let mut kp = [[0.0; 3]; NUM_KEYPOINTS];
    for (o, p) in kp.iter_mut().zip(points) {
        *o = fixed(p, "keypoint")?;
    }
    Ok(Keypoints3d(kp))
}

fn points3_arg(points: &[Vec<f64>]) -> PyResult<Vec<[f64; 3]>> {
    points.iter().map(|p| fixed(p, "point")).collect()
}

fn keypoints2d_arg(points: &[Vec<f64>], visible: Option<Vec<bool>>) -> PyResult<Keypoints2d> {
    let pts: Vec<[f64; 2]> = points.iter().map(|p| fixed(p, "2D keypoint")).collect::<PyResult<_>>()?;
    let visible = visible.unwrap_or_else(|| vec![true; pts.len()]);
    let kp = Keypoints2d { points: pts, visible };
    kp.validate().map_err(py_err)?;
    Ok(kp)
}

fn camera_arg(c: (f64, f64, f64, f64)) -> PyResult<CameraIntrinsics> {
    CameraIntrinsics::new(c.0, c.1, c.2, c.3).map_err(py_err)
}

fn rotmat_arg(m: &[Vec<f64>]) -> PyResult<RotMat> {
    if m.len() != 3 {
        return Err(PyValueError::new_err(format!("matrix: expected 3 rows, got {}", m.len())));
    }
    let rows = [fixed(&m[0], "matrix row")?, fixed(&m[1], "matrix row")?, fixed(&m[2], "matrix row")?];
    RotMat::from_rows(&rows).map_err(py_err)
}

fn rotmat_out(r: &RotMat) -> Vec<Vec<f64>> {
    r.to_rows().iter().map(|row| row.to_vec()).collect()
}

type Points3 = Vec<[f64; 3]>;

/// MANO-compatible hand model.
#[pyclass(name = "HandModel", module = "pyidhand", frozen)]
struct PyHandModel {
    inner: idhand::HandModel,
}

#[pymethods]
impl PyHandModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        idhand::load_model(text.as_bytes())
            .map(|inner| PyHandModel { inner })
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        idhand::load_model(&bytes)
            .map(|inner| PyHandModel { inner })
            .map_err(py_err)
    }

    /// Deterministic procedural hand.
    #[staticmethod]
    #[pyo3(signature = (seed, v_per_segment = 3))]
    fn toy(seed: u64, v_per_segment: usize) -> Self {
        PyHandModel {
            inner: idhand::synth_toy_model(seed, v_per_segment),
        }
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.inner.num_vertices()
    }

    #[getter]
    fn faces(&self) -> Vec<[usize; 3]> {
        self.inner.faces().to_vec()
    }

    fn shaped_template(&self, shape: Vec<f64>) -> PyResult<Vec<[f64; 3]>> {
        Ok(self.inner.shaped_template(&shape_arg(&shape)?))
    }

    fn joint_locations(&self, shape: Vec<f64>) -> PyResult<Vec<[f64; 3]>> {
        Ok(self.inner.joint_locations(&shape_arg(&shape)?))
    }

    /// Returns `(vertices, keypoints)`; omitted arguments use the rest pose.
    #[pyo3(signature = (shape = None, pose = None, root = None))]
    fn forward(
        &self,
        shape: Option<Vec<f64>>,
        pose: Option<Vec<Vec<f64>>>,
        root: Option<Vec<f64>>,
    ) -> PyResult<(Points3, Points3)> {
        let params = params_arg(shape, pose, root)?;
        let (mesh, kp) = self.inner.forward(&params).map_err(py_err)?;
        Ok((mesh.vertices, kp.0.to_vec()))
    }

    #[pyo3(signature = (shape = None, pose = None, root = None))]
    fn keypoints(
        &self,
        shape: Option<Vec<f64>>,
        pose: Option<Vec<Vec<f64>>>,
        root: Option<Vec<f64>>,
    ) -> PyResult<Vec<[f64; 3]>> {
        let params = params_arg(shape, pose, root)?;
        Ok(self.inner.keypoints(&params).map_err(py_err)?.0.to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "HandModel(name={:?}, vertices={}, faces={})",
            self.inner.name(),
            self.inner.num_vertices(),
            self.inner.num_faces()
        )
    }
}

fn params_arg(shape: Option<Vec<f64>>, pose: Option<Vec<Vec<f64>>>, root: Option<Vec<f64>>) -> PyResult<HandParams> {
    let mut p = HandParams::default();
    if let Some(s) = shape {
        p.shape = shape_arg(&s)?;
    }
    if let Some(q) = pose {
        p.pose = pose_arg(&q)?;
    }
    if let Some(r) = root {
        p.root = fixed(&r, "root")?;
    }
    Ok(p)
}

#[pyfunction]
fn rot6d_to_matrix(a: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let r = Rot6d(fixed(&a, "rot6d")?).to_matrix().map_err(py_err)?;
    Ok(rotmat_out(&r))
}

#[pyfunction]
fn matrix_to_rot6d(m: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(rotmat_arg(&m)?.to_rot6d().0.to_vec())
}

/// `R(delta) · R(prev)` as 6D.
#[pyfunction]
fn compose_rot6d(delta: Vec<f64>, prev: Vec<f64>) -> PyResult<Vec<f64>> {
    let out = rotation::compose_rot6d(&Rot6d(fixed(&delta, "delta")?), &Rot6d(fixed(&prev, "prev")?)).map_err(py_err)?;
    Ok(out.0.to_vec())
}

#[pyfunction]
fn axis_angle_to_matrix(v: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let a: [f64; 3] = fixed(&v, "axis-angle")?;
    Ok(rotmat_out(&rotation::axis_angle_to_matrix(&AxisAngle(a.into()))))
}

#[pyfunction]
fn matrix_to_axis_angle(m: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let aa = rotation::matrix_to_axis_angle(rotmat_arg(&m)?.matrix()).map_err(py_err)?;
    Ok(aa.0.iter().copied().collect())
}

/// Pinhole projection of 3D points to pixels.
#[pyfunction]
fn project(points: Vec<Vec<f64>>, camera: (f64, f64, f64, f64)) -> PyResult<Vec<[f64; 2]>> {
    project_points(&points3_arg(&points)?, &camera_arg(camera)?).map_err(py_err)
}

fn energy_kind(name: &str) -> PyResult<EnergyKind> {
    match name {
        "mean" => Ok(EnergyKind::Mean),
        "sumsq" => Ok(EnergyKind::Sumsq),
        other => Err(PyValueError::new_err(format!("energy must be 'mean' or 'sumsq', got {other:?}"))),
    }
}

/// Reprojection energy of `(shape, pose, root)` against 2D keypoints.
#[pyfunction]
#[pyo3(signature = (model, shape, pose, root, keypoints_2d, camera, visible = None, energy = "mean"))]
#[allow(clippy::too_many_arguments)]
fn energy(
    model: &PyHandModel,
    shape: Vec<f64>,
    pose: Vec<Vec<f64>>,
    root: Vec<f64>,
    keypoints_2d: Vec<Vec<f64>>,
    camera: (f64, f64, f64, f64),
    visible: Option<Vec<bool>>,
    energy: &str,
) -> PyResult<f64> {
    let params = params_arg(Some(shape), Some(pose), Some(root))?;
    let x_d = keypoints2d_arg(&keypoints_2d, visible)?;
    reprojection_energy(&params, &x_d, &model.inner, &camera_arg(camera)?, energy_kind(energy)?).map_err(py_err)
}

/// Two-stage fit of root and pose with the shape held fixed.
#[pyfunction]
#[pyo3(signature = (
    model, shape, pose, root, keypoints_2d, camera, visible = None,
    stage1_iters = 200, stage1_lr = 1e-2, stage2_iters = 60, stage2_lr = 1e-3, energy = "mean"
))]
#[allow(clippy::too_many_arguments)]
fn fit_two_stage<'py>(
    py: Python<'py>,
    model: &PyHandModel,
    shape: Vec<f64>,
    pose: Vec<Vec<f64>>,
    root: Vec<f64>,
    keypoints_2d: Vec<Vec<f64>>,
    camera: (f64, f64, f64, f64),
    visible: Option<Vec<bool>>,
    stage1_iters: usize,
    stage1_lr: f64,
    stage2_iters: usize,
    stage2_lr: f64,
    energy: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let init = params_arg(Some(shape), Some(pose), Some(root))?;
    let x_d = keypoints2d_arg(&keypoints_2d, visible)?;
    let cfg = FitConfig {
        stage1_iters,
        stage1_lr,
        stage2_iters,
        stage2_lr,
        energy: energy_kind(energy)?,
        ..Default::default()
    };
    let cam = camera_arg(camera)?;
    let res = py
        .detach(|| fit_core(&init, &x_d, &model.inner, &cam, &cfg))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("shape", res.params.shape.to_vec())?;
    d.set_item("pose", pose_out(&res.params.pose))?;
    d.set_item("root", res.params.root.to_vec())?;
    d.set_item("energy_initial", res.energy_initial)?;
    d.set_item("energy_final", res.energy_final)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (confidences, temperature = personalization::DEFAULT_TEMPERATURE))]
fn attention_weights(confidences: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    personalization::attention_weights(&confidences, temperature).map_err(py_err)
}

/// Calibrates one subject's shape from per-image predictions.
#[pyfunction]
#[pyo3(signature = (model, shapes, poses, confidences = None, temperature = personalization::DEFAULT_TEMPERATURE, uniform = false))]
fn calibrate_shape<'py>(
    py: Python<'py>,
    model: &PyHandModel,
    shapes: Vec<Vec<f64>>,
    poses: Vec<Vec<Vec<f64>>>,
    confidences: Option<Vec<f64>>,
    temperature: f64,
    uniform: bool,
) -> PyResult<Bound<'py, PyDict>> {
    if shapes.len() != poses.len() {
        return Err(PyValueError::new_err("shapes and poses differ in length"));
    }
    if confidences.as_ref().is_some_and(|c| c.len() != shapes.len()) {
        return Err(PyValueError::new_err("confidences and shapes differ in length"));
    }
    let mut entries = Vec::with_capacity(shapes.len());
    for (k, (s, p)) in shapes.iter().zip(&poses).enumerate() {
        entries.push(BundleEntry {
            shape_hat: shape_arg(s)?,
            pose_hat: pose_arg(p)?,
            confidence: confidences.as_ref().map(|c| c[k]),
        });
    }
    let mode = if uniform {
        CalibrationMode::Uniform
    } else {
        CalibrationMode::Attention { temperature }
    };
    let bundle = SubjectBundle { entries };
    let res = py
        .detach(|| personalization::calibrate_shape(&bundle, &model.inner, &mode))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("shape", res.shape.to_vec())?;
    d.set_item("weights", res.weights)?;
    d.set_item("objective_final", res.objective_final)?;
    d.set_item("iterations", res.iterations)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (confidences, shape_errors, margin = personalization::DEFAULT_MARGIN))]
fn ranking_pairs(confidences: Vec<f64>, shape_errors: Vec<f64>, margin: f64) -> PyResult<f64> {
    personalization::ranking_pairs(&confidences, &shape_errors, margin).map_err(py_err)
}

#[pyfunction]
fn mpjpe(pred: Vec<Vec<f64>>, gt: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(metrics::mpjpe(&keypoints3d_arg(&pred)?, &keypoints3d_arg(&gt)?))
}

#[pyfunction]
fn mpvpe(pred: Vec<Vec<f64>>, gt: Vec<Vec<f64>>, pred_root: Vec<f64>, gt_root: Vec<f64>) -> PyResult<f64> {
    let mesh = |v: &[Vec<f64>]| -> PyResult<Mesh> {
        Ok(Mesh {
            vertices: points3_arg(v)?,
            faces: vec![],
        })
    };
    metrics::mpvpe(&mesh(&pred)?, &mesh(&gt)?, &fixed(&pred_root, "pred_root")?, &fixed(&gt_root, "gt_root")?)
        .map_err(py_err)
}

/// Returns `(mse_mano, w_error_mm, l_error_mm)`.
#[pyfunction]
fn shape_errors(beta_est: Vec<f64>, beta_gt: Vec<f64>, model: &PyHandModel) -> PyResult<(f64, f64, f64)> {
    let e = metrics::shape_errors(&shape_arg(&beta_est)?, &shape_arg(&beta_gt)?, &model.inner).map_err(py_err)?;
    Ok((e.mse_mano, e.w_error_mm, e.l_error_mm))
}

/// `variant` is `"baseline"` or `"identity_aware"`.
#[pyfunction]
fn total_loss(l_mesh: f64, l_norm: f64, l_edge: f64, l_pose: f64, l_shape: f64, variant: &str) -> PyResult<f64> {
    let variant = match variant {
        "baseline" => LossVariant::Baseline,
        "identity_aware" => LossVariant::IdentityAware,
        other => return Err(PyValueError::new_err(format!("unknown variant {other:?}"))),
    };
    let parts = LossParts {
        l_mesh,
        l_norm,
        l_edge,
        l_pose,
        l_shape,
    };
    Ok(metrics::total_loss(&parts, variant))
}

#[pymodule]
fn pyidhand(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHandModel>()?;
    m.add_function(wrap_pyfunction!(rot6d_to_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_to_rot6d, m)?)?;
    m.add_function(wrap_pyfunction!(compose_rot6d, m)?)?;
    m.add_function(wrap_pyfunction!(axis_angle_to_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_to_axis_angle, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(fit_two_stage, m)?)?;
    m.add_function(wrap_pyfunction!(attention_weights, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_shape, m)?)?;
    m.add_function(wrap_pyfunction!(ranking_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(mpvpe, m)?)?;
    m.add_function(wrap_pyfunction!(shape_errors, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add("NUM_KEYPOINTS", NUM_KEYPOINTS)?;
    Ok(())
}
