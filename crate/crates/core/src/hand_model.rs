//! MANO-compatible parametric hand model.
//!
//! The forward function shapes the template with linear shape blendshapes,
//! adds pose-corrective offsets driven by `vec(R_n - I)` of the 15 non-root
//! joints, and skins the result with linear blend skinning about the rest
//! joint locations. Joint order follows MANO:
//!
//! | joints  | finger |
//! |---------|--------|
//! | 0       | wrist  |
//! | 1..=3   | index  |
//! | 4..=6   | middle |
//! | 7..=9   | pinky  |
//! | 10..=12 | ring   |
//! | 13..=15 | thumb  |
//!
//! Keypoints are reported in the 21-point order wrist, thumb (MCP, PIP, DIP,
//! tip), index, middle, ring, pinky. Fingertips are mesh vertices named by the
//! model file.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{GramSchmidt, Rot6d, DEFAULT_GS_EPS};

pub const NUM_JOINTS: usize = 16;
pub const NUM_SHAPE: usize = 10;
pub const NUM_POSE_COEFFS: usize = 9 * (NUM_JOINTS - 1);
pub const NUM_KEYPOINTS: usize = 21;
pub const FORMAT_VERSION: u32 = 1;
pub const SKIN_WEIGHT_TOL: f64 = 1e-6;

/// Keypoint index of the wrist.
pub const KP_WRIST: usize = 0;
/// Keypoint index of the index-finger MCP joint.
pub const KP_INDEX_MCP: usize = 5;
/// Keypoint index of the middle fingertip.
pub const KP_MIDDLE_TIP: usize = 12;
/// Keypoint index of the ring-finger MCP joint.
pub const KP_RING_MCP: usize = 13;

/// Where each of the 21 keypoints comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeypointSource {
    Joint(usize),
    /// Position in the model's fingertip list (thumb, index, middle, ring, pinky).
    Tip(usize),
}

use KeypointSource::{Joint, Tip};

pub const KEYPOINT_SOURCES: [KeypointSource; NUM_KEYPOINTS] = [
    Joint(0),
    Joint(13),
    Joint(14),
    Joint(15),
    Tip(0),
    Joint(1),
    Joint(2),
    Joint(3),
    Tip(1),
    Joint(4),
    Joint(5),
    Joint(6),
    Tip(2),
    Joint(10),
    Joint(11),
    Joint(12),
    Tip(3),
    Joint(7),
    Joint(8),
    Joint(9),
    Tip(4),
];

/// Shape, pose and root translation of one hand instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandParams {
    pub shape: [f64; NUM_SHAPE],
    pub pose: [Rot6d; NUM_JOINTS],
    pub root: [f64; 3],
}

impl Default for HandParams {
    fn default() -> Self {
        HandParams {
            shape: [0.0; NUM_SHAPE],
            pose: [Rot6d::IDENTITY; NUM_JOINTS],
            root: [0.0; 3],
        }
    }
}

impl HandParams {
    pub fn with_shape(shape: [f64; NUM_SHAPE]) -> Self {
        HandParams {
            shape,
            ..Default::default()
        }
    }

    /// Pose as the flat 96-vector of raw 6D coordinates.
    pub fn pose_flat(&self) -> [f64; 6 * NUM_JOINTS] {
        let mut out = [0.0; 6 * NUM_JOINTS];
        for (k, r) in self.pose.iter().enumerate() {
            out[6 * k..6 * k + 6].copy_from_slice(&r.0);
        }
        out
    }

    pub fn set_pose_flat(&mut self, flat: &[f64]) {
        for (k, r) in self.pose.iter_mut().enumerate() {
            r.0.copy_from_slice(&flat[6 * k..6 * k + 6]);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.shape.iter().chain(self.root.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite shape or root".into()));
        }
        for r in &self.pose {
            GramSchmidt::new(r, DEFAULT_GS_EPS)?;
        }
        Ok(())
    }
}

/// Triangle mesh in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn validate(&self) -> Result<()> {
        validate_faces(&self.faces, self.vertices.len(), "faces")
    }

    pub fn vertex(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.vertices[i])
    }
}

/// 21 keypoints in meters, wrist-then-thumb..pinky order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Keypoints3d(pub [[f64; 3]; NUM_KEYPOINTS]);

impl Keypoints3d {
    pub fn point(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.0[i])
    }
}

/// On-disk layout of a hand model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HandModelFile {
    format_version: u32,
    name: String,
    template: Vec<[f64; 3]>,
    shape_dirs: Vec<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose_dirs: Option<Vec<Vec<[f64; 3]>>>,
    joint_regressor: Vec<Vec<f64>>,
    skin_weights: Vec<Vec<f64>>,
    parents: Vec<i64>,
    faces: Vec<[usize; 3]>,
    fingertip_vertices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

/// Validated, immutable hand model.
#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    name: String,
    template: Vec<[f64; 3]>,
    shape_dirs: Vec<Vec<[f64; 3]>>,
    pose_dirs: Option<Vec<Vec<[f64; 3]>>>,
    joint_regressor: Vec<Vec<f64>>,
    skin_weights: Vec<Vec<f64>>,
    parents: Vec<i64>,
    faces: Vec<[usize; 3]>,
    fingertip_vertices: [usize; 5],
    provenance: Option<serde_json::Value>,
    // derived
    order: Vec<usize>,
    sparse_weights: Vec<Vec<(usize, f64)>>,
}

/// Raw arrays for [`HandModel::from_parts`].
#[derive(Debug, Clone, Default)]
pub struct HandModelParts {
    pub name: String,
    pub template: Vec<[f64; 3]>,
    pub shape_dirs: Vec<Vec<[f64; 3]>>,
    pub pose_dirs: Option<Vec<Vec<[f64; 3]>>>,
    pub joint_regressor: Vec<Vec<f64>>,
    pub skin_weights: Vec<Vec<f64>>,
    pub parents: Vec<i64>,
    pub faces: Vec<[usize; 3]>,
    pub fingertip_vertices: Vec<usize>,
}

/// Parses and validates a model file. Invalid files are rejected, never repaired.
pub fn load_model(bytes: &[u8]) -> Result<HandModel> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let file: HandModelFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Schema {
            path: "format_version".into(),
            message: format!(
                "unsupported version {}, expected {FORMAT_VERSION}",
                file.format_version
            ),
        });
    }
    let mut model = HandModel::from_parts(HandModelParts {
        name: file.name,
        template: file.template,
        shape_dirs: file.shape_dirs,
        pose_dirs: file.pose_dirs,
        joint_regressor: file.joint_regressor,
        skin_weights: file.skin_weights,
        parents: file.parents,
        faces: file.faces,
        fingertip_vertices: file.fingertip_vertices,
    })?;
    model.provenance = file.provenance;
    Ok(model)
}

fn check_finite3(rows: &[[f64; 3]], path: &str) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        if !r.iter().all(|v| v.is_finite()) {
            return Err(Error::invariant(format!("{path}[{i}]"), "non-finite value"));
        }
    }
    Ok(())
}

fn validate_faces(faces: &[[usize; 3]], n_vertices: usize, path: &str) -> Result<()> {
    for (f, face) in faces.iter().enumerate() {
        if let Some(&bad) = face.iter().find(|&&i| i >= n_vertices) {
            return Err(Error::invariant(
                format!("{path}[{f}]"),
                format!("vertex index {bad} out of range (V = {n_vertices})"),
            ));
        }
        if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
            return Err(Error::invariant(
                format!("{path}[{f}]"),
                "degenerate face (repeated vertex index)",
            ));
        }
    }
    Ok(())
}

/// Topological order of the kinematic tree, root first.
fn tree_order(parents: &[i64]) -> Result<Vec<usize>> {
    let j = parents.len();
    if j == 0 || parents[0] != -1 {
        return Err(Error::invariant("parents[0]", "root joint must have parent -1"));
    }
    for (k, &p) in parents.iter().enumerate().skip(1) {
        if p < 0 || p as usize >= j || p as usize == k {
            return Err(Error::invariant(
                format!("parents[{k}]"),
                format!("invalid parent {p}: not a tree"),
            ));
        }
    }
    // every joint must reach the root without revisiting
    for k in 1..j {
        let mut cur = k;
        let mut steps = 0;
        while cur != 0 {
            cur = parents[cur] as usize;
            steps += 1;
            if steps > j {
                return Err(Error::invariant(
                    format!("parents[{k}]"),
                    "cycle detected: not a tree",
                ));
            }
        }
    }
    let mut children = vec![Vec::new(); j];
    for k in 1..j {
        children[parents[k] as usize].push(k);
    }
    let mut order = Vec::with_capacity(j);
    let mut stack = vec![0];
    while let Some(k) = stack.pop() {
        order.push(k);
        stack.extend(children[k].iter().rev());
    }
    Ok(order)
}

impl HandModel {
    pub fn from_parts(parts: HandModelParts) -> Result<Self> {
        let v = parts.template.len();
        if v == 0 {
            return Err(Error::invariant("template", "empty template"));
        }
        check_finite3(&parts.template, "template")?;

        if parts.shape_dirs.len() != NUM_SHAPE {
            return Err(Error::invariant(
                "shape_dirs",
                format!("expected {NUM_SHAPE} shape directions, got {}", parts.shape_dirs.len()),
            ));
        }
        for (s, dir) in parts.shape_dirs.iter().enumerate() {
            if dir.len() != v {
                return Err(Error::invariant(
                    format!("shape_dirs[{s}]"),
                    format!("expected {v} vertices, got {}", dir.len()),
                ));
            }
            check_finite3(dir, &format!("shape_dirs[{s}]"))?;
        }

        let j = parts.parents.len();
        if j != NUM_JOINTS {
            return Err(Error::invariant(
                "parents",
                format!("expected {NUM_JOINTS} joints, got {j}"),
            ));
        }
        let order = tree_order(&parts.parents)?;

        if let Some(pd) = &parts.pose_dirs {
            if pd.len() != NUM_POSE_COEFFS {
                return Err(Error::invariant(
                    "pose_dirs",
                    format!("expected {NUM_POSE_COEFFS} pose directions, got {}", pd.len()),
                ));
            }
            for (p, dir) in pd.iter().enumerate() {
                if dir.len() != v {
                    return Err(Error::invariant(
                        format!("pose_dirs[{p}]"),
                        format!("expected {v} vertices, got {}", dir.len()),
                    ));
                }
                check_finite3(dir, &format!("pose_dirs[{p}]"))?;
            }
        }

        if parts.joint_regressor.len() != j {
            return Err(Error::invariant(
                "joint_regressor",
                format!("expected {j} rows, got {}", parts.joint_regressor.len()),
            ));
        }
        for (k, row) in parts.joint_regressor.iter().enumerate() {
            if row.len() != v {
                return Err(Error::invariant(
                    format!("joint_regressor[{k}]"),
                    format!("expected {v} columns, got {}", row.len()),
                ));
            }
            if !row.iter().all(|x| x.is_finite()) {
                return Err(Error::invariant(format!("joint_regressor[{k}]"), "non-finite value"));
            }
        }

        if parts.skin_weights.len() != v {
            return Err(Error::invariant(
                "skin_weights",
                format!("expected {v} rows, got {}", parts.skin_weights.len()),
            ));
        }
        let mut sparse_weights = Vec::with_capacity(v);
        for (i, row) in parts.skin_weights.iter().enumerate() {
            let path = format!("skin_weights[{i}]");
            if row.len() != j {
                return Err(Error::invariant(path, format!("expected {j} columns, got {}", row.len())));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::invariant(path, "weights must be finite and nonnegative"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SKIN_WEIGHT_TOL {
                return Err(Error::invariant(path, format!("row sums to {sum}, expected 1")));
            }
            sparse_weights.push(
                row.iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(k, w)| (k, *w))
                    .collect(),
            );
        }

        validate_faces(&parts.faces, v, "faces")?;

        if parts.fingertip_vertices.len() != 5 {
            return Err(Error::invariant(
                "fingertip_vertices",
                format!("expected 5 indices, got {}", parts.fingertip_vertices.len()),
            ));
        }
        let mut tips = [0usize; 5];
        for (t, &idx) in parts.fingertip_vertices.iter().enumerate() {
            if idx >= v {
                return Err(Error::invariant(
                    format!("fingertip_vertices[{t}]"),
                    format!("vertex index {idx} out of range (V = {v})"),
                ));
            }
            tips[t] = idx;
        }

        Ok(HandModel {
            name: parts.name,
            template: parts.template,
            shape_dirs: parts.shape_dirs,
            pose_dirs: parts.pose_dirs,
            joint_regressor: parts.joint_regressor,
            skin_weights: parts.skin_weights,
            parents: parts.parents,
            faces: parts.faces,
            fingertip_vertices: tips,
            provenance: None,
            order,
            sparse_weights,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = HandModelFile {
            format_version: FORMAT_VERSION,
            name: self.name.clone(),
            template: self.template.clone(),
            shape_dirs: self.shape_dirs.clone(),
            pose_dirs: self.pose_dirs.clone(),
            joint_regressor: self.joint_regressor.clone(),
            skin_weights: self.skin_weights.clone(),
            parents: self.parents.clone(),
            faces: self.faces.clone(),
            fingertip_vertices: self.fingertip_vertices.to_vec(),
            provenance: self.provenance.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Same model with the pose-corrective blendshapes removed.
    pub fn without_pose_dirs(&self) -> HandModel {
        HandModel {
            pose_dirs: None,
            ..self.clone()
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }
    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }
    pub fn num_shape(&self) -> usize {
        self.shape_dirs.len()
    }
    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }
    pub fn template(&self) -> &[[f64; 3]] {
        &self.template
    }
    pub fn shape_dirs(&self) -> &[Vec<[f64; 3]>] {
        &self.shape_dirs
    }
    pub fn pose_dirs(&self) -> Option<&[Vec<[f64; 3]>]> {
        self.pose_dirs.as_deref()
    }
    pub fn joint_regressor(&self) -> &[Vec<f64>] {
        &self.joint_regressor
    }
    pub fn skin_weights(&self) -> &[Vec<f64>] {
        &self.skin_weights
    }
    pub fn parents(&self) -> &[i64] {
        &self.parents
    }
    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }
    pub fn fingertip_vertices(&self) -> [usize; 5] {
        self.fingertip_vertices
    }
    pub fn provenance(&self) -> Option<&serde_json::Value> {
        self.provenance.as_ref()
    }

    /// Template plus linear shape blendshapes.
    pub fn shaped_template(&self, shape: &[f64; NUM_SHAPE]) -> Vec<[f64; 3]> {
        let mut out = self.template.clone();
        for (beta, dir) in shape.iter().zip(&self.shape_dirs) {
            if *beta == 0.0 {
                continue;
            }
            for (o, d) in out.iter_mut().zip(dir) {
                for c in 0..3 {
                    o[c] += beta * d[c];
                }
            }
        }
        out
    }

    /// Rest joint locations regressed from the shaped template.
    pub fn joint_locations(&self, shape: &[f64; NUM_SHAPE]) -> Vec<[f64; 3]> {
        self.regress_joints(&self.shaped_template(shape))
    }

    fn regress_joints(&self, verts: &[[f64; 3]]) -> Vec<[f64; 3]> {
        self.joint_regressor
            .iter()
            .map(|row| {
                let mut acc = [0.0; 3];
                for (w, v) in row.iter().zip(verts) {
                    if *w != 0.0 {
                        for c in 0..3 {
                            acc[c] += w * v[c];
                        }
                    }
                }
                acc
            })
            .collect()
    }

    /// Fixes the shape, caching everything that depends only on it.
    pub fn shaped(&self, shape: &[f64; NUM_SHAPE]) -> ShapedHand<'_> {
        let verts = self.shaped_template(shape);
        let joints = self.regress_joints(&verts);
        ShapedHand {
            model: self,
            vertices: verts.into_iter().map(Vector3::from).collect(),
            joints: joints.into_iter().map(Vector3::from).collect(),
        }
    }

    /// Full forward pass: posed mesh and 21 keypoints, both translated by `root`.
    pub fn forward(&self, params: &HandParams) -> Result<(Mesh, Keypoints3d)> {
        let shaped = self.shaped(&params.shape);
        let state = shaped.pose(&params.pose)?;
        Ok((
            shaped.mesh_at(&state, &params.root),
            shaped.keypoints_at(&state, &params.root),
        ))
    }

    pub fn keypoints(&self, params: &HandParams) -> Result<Keypoints3d> {
        let shaped = self.shaped(&params.shape);
        let state = shaped.pose(&params.pose)?;
        Ok(shaped.keypoints_at(&state, &params.root))
    }
}

/// A model with its shape fixed.
#[derive(Debug, Clone)]
pub struct ShapedHand<'a> {
    model: &'a HandModel,
    vertices: Vec<Vector3<f64>>,
    joints: Vec<Vector3<f64>>,
}

/// Per-joint quantities of one posed evaluation.
#[derive(Debug, Clone)]
pub struct PoseState {
    gs: Vec<GramSchmidt>,
    local: Vec<Matrix3<f64>>,
    global: Vec<Matrix3<f64>>,
    posed_joints: Vec<Vector3<f64>>,
    pose_coeffs: Option<[f64; NUM_POSE_COEFFS]>,
}

impl PoseState {
    pub fn global_rotations(&self) -> &[Matrix3<f64>] {
        &self.global
    }
    pub fn posed_joints(&self) -> &[Vector3<f64>] {
        &self.posed_joints
    }

    /// Same rotations with every joint transform shifted by `t`.
    pub fn translated(&self, t: &Vector3<f64>) -> PoseState {
        let mut out = self.clone();
        out.posed_joints.iter_mut().for_each(|p| *p += t);
        out
    }
}

impl<'a> ShapedHand<'a> {
    pub fn model(&self) -> &'a HandModel {
        self.model
    }

    pub fn rest_joints(&self) -> &[Vector3<f64>] {
        &self.joints
    }

    pub fn rest_vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    /// Decodes rotations and composes the kinematic chain.
    pub fn pose(&self, pose: &[Rot6d; NUM_JOINTS]) -> Result<PoseState> {
        let m = self.model;
        let gs = pose
            .iter()
            .map(|r| GramSchmidt::new(r, DEFAULT_GS_EPS))
            .collect::<Result<Vec<_>>>()?;
        let local: Vec<Matrix3<f64>> = gs.iter().map(GramSchmidt::matrix).collect();
        let mut global = vec![Matrix3::identity(); NUM_JOINTS];
        let mut posed = vec![Vector3::zeros(); NUM_JOINTS];
        for &k in &m.order {
            if k == 0 {
                global[0] = local[0];
                posed[0] = self.joints[0];
            } else {
                let p = m.parents[k] as usize;
                global[k] = global[p] * local[k];
                posed[k] = global[p] * (self.joints[k] - self.joints[p]) + posed[p];
            }
        }
        let pose_coeffs = m.pose_dirs.as_ref().map(|_| {
            let mut c = [0.0; NUM_POSE_COEFFS];
            for n in 1..NUM_JOINTS {
                let r = &local[n];
                for row in 0..3 {
                    for col in 0..3 {
                        let id = if row == col { 1.0 } else { 0.0 };
                        c[(n - 1) * 9 + 3 * row + col] = r[(row, col)] - id;
                    }
                }
            }
            c
        });
        Ok(PoseState {
            gs,
            local,
            global,
            posed_joints: posed,
            pose_coeffs,
        })
    }

    /// Shaped vertex plus pose-corrective offset.
    fn unposed_vertex(&self, state: &PoseState, v: usize) -> Vector3<f64> {
        let mut u = self.vertices[v];
        if let (Some(coeffs), Some(dirs)) = (&state.pose_coeffs, &self.model.pose_dirs) {
            for (c, dir) in coeffs.iter().zip(dirs) {
                if *c != 0.0 {
                    u += Vector3::from(dir[v]) * *c;
                }
            }
        }
        u
    }

    /// Skinned vertex `v` without root translation.
    pub fn skin_vertex(&self, state: &PoseState, v: usize) -> Vector3<f64> {
        let u = self.unposed_vertex(state, v);
        let mut out = Vector3::zeros();
        for &(k, w) in &self.model.sparse_weights[v] {
            out += (state.global[k] * (u - self.joints[k]) + state.posed_joints[k]) * w;
        }
        out
    }

    pub fn mesh_at(&self, state: &PoseState, root: &[f64; 3]) -> Mesh {
        let r = Vector3::from(*root);
        let vertices = (0..self.model.num_vertices())
            .map(|v| (self.skin_vertex(state, v) + r).into())
            .collect();
        Mesh {
            vertices,
            faces: self.model.faces.clone(),
        }
    }

    pub fn keypoints_at(&self, state: &PoseState, root: &[f64; 3]) -> Keypoints3d {
        let r = Vector3::from(*root);
        let mut out = [[0.0; 3]; NUM_KEYPOINTS];
        for (o, src) in out.iter_mut().zip(KEYPOINT_SOURCES) {
            let p = match src {
                Joint(k) => state.posed_joints[k],
                Tip(t) => self.skin_vertex(state, self.model.fingertip_vertices[t]),
            };
            *o = (p + r).into();
        }
        Keypoints3d(out)
    }

    pub fn keypoints(&self, pose: &[Rot6d; NUM_JOINTS], root: &[f64; 3]) -> Result<Keypoints3d> {
        Ok(self.keypoints_at(&self.pose(pose)?, root))
    }

    /// Backpropagates keypoint gradients to the 96 raw 6D pose coordinates.
    ///
    /// The gradient with respect to the root translation is the plain sum of
    /// `grad` and is left to the caller.
    pub fn keypoints_vjp(
        &self,
        state: &PoseState,
        grad: &[Vector3<f64>; NUM_KEYPOINTS],
    ) -> [f64; 6 * NUM_JOINTS] {
        let m = self.model;
        let mut d_global = vec![Matrix3::<f64>::zeros(); NUM_JOINTS];
        let mut d_posed = vec![Vector3::<f64>::zeros(); NUM_JOINTS];
        let mut d_local = vec![Matrix3::<f64>::zeros(); NUM_JOINTS];

        for (g, src) in grad.iter().zip(KEYPOINT_SOURCES) {
            match src {
                Joint(k) => d_posed[k] += g,
                Tip(t) => {
                    let v = m.fingertip_vertices[t];
                    let u = self.unposed_vertex(state, v);
                    let mut du = Vector3::zeros();
                    for &(k, w) in &m.sparse_weights[v] {
                        let wg = g * w;
                        d_posed[k] += wg;
                        d_global[k] += wg * (u - self.joints[k]).transpose();
                        du += state.global[k].transpose() * wg;
                    }
                    if let Some(dirs) = &m.pose_dirs {
                        for n in 1..NUM_JOINTS {
                            for e in 0..9 {
                                let d = Vector3::from(dirs[(n - 1) * 9 + e][v]);
                                d_local[n][(e / 3, e % 3)] += du.dot(&d);
                            }
                        }
                    }
                }
            }
        }

        for &k in m.order.iter().rev() {
            if k == 0 {
                d_local[0] += d_global[0];
                continue;
            }
            let p = m.parents[k] as usize;
            let offset = self.joints[k] - self.joints[p];
            let dg = d_global[k];
            let dp = d_posed[k];
            d_global[p] += dp * offset.transpose() + dg * state.local[k].transpose();
            d_posed[p] += dp;
            d_local[k] += state.global[p].transpose() * dg;
        }

        let mut out = [0.0; 6 * NUM_JOINTS];
        for k in 0..NUM_JOINTS {
            out[6 * k..6 * k + 6].copy_from_slice(&state.gs[k].backward(&d_local[k]));
        }
        out
    }
}
