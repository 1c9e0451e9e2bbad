//! Rotation representations used by the pose parameterization.
//!
//! Poses are stored as continuous 6D vectors: the first two *columns* of a
//! rotation matrix, concatenated as `(c0.x, c0.y, c0.z, c1.x, c1.y, c1.z)`.
//! Decoding runs Gram-Schmidt on the two 3-vectors, so any non-degenerate
//! 6-tuple (not necessarily orthonormal or unit length) maps to a proper
//! rotation. Axis-angle vectors are supported for interchange with assets
//! that store Rodrigues vectors.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default threshold below which a Gram-Schmidt column is considered degenerate.
pub const DEFAULT_GS_EPS: f64 = 1e-8;

/// Orthonormality tolerance for [`RotMat`].
pub const ROTATION_TOL: f64 = 1e-6;

/// 6D rotation: first two columns of a rotation matrix, column-concatenated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rot6d(pub [f64; 6]);

/// Proper rotation matrix (orthonormal, det = +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMat(Matrix3<f64>);

/// Rodrigues vector: unit axis scaled by the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vector3<f64>);

impl Rot6d {
    pub const IDENTITY: Rot6d = Rot6d([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn first(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn second(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn to_matrix(&self) -> Result<RotMat> {
        rot6d_to_matrix(self)
    }
}

impl Default for Rot6d {
    fn default() -> Self {
        Rot6d::IDENTITY
    }
}

impl From<[f64; 6]> for Rot6d {
    fn from(v: [f64; 6]) -> Self {
        Rot6d(v)
    }
}

impl RotMat {
    pub fn identity() -> Self {
        RotMat(Matrix3::identity())
    }

    /// Validates orthonormality and orientation.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NotARotation("non-finite entries".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        if ortho >= ROTATION_TOL {
            return Err(Error::NotARotation(format!(
                "||R^T R - I|| = {ortho:e} exceeds {ROTATION_TOL:e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() >= ROTATION_TOL {
            return Err(Error::NotARotation(format!("det = {det}")));
        }
        Ok(RotMat(m))
    }

    /// Rotation about the z axis.
    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotMat(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Builds from row-major entries, validating orthonormality.
    pub fn from_rows(rows: &[[f64; 3]; 3]) -> Result<Self> {
        RotMat::new(Matrix3::from_fn(|i, j| rows[i][j]))
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.0[(i, j)]))
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    pub fn to_rot6d(&self) -> Rot6d {
        let m = &self.0;
        Rot6d([
            m[(0, 0)],
            m[(1, 0)],
            m[(2, 0)],
            m[(0, 1)],
            m[(1, 1)],
            m[(2, 1)],
        ])
    }

    pub fn mul(&self, other: &RotMat) -> RotMat {
        RotMat(self.0 * other.0)
    }
}

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vector3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

/// Gram-Schmidt decode with the default degeneracy threshold.
pub fn rot6d_to_matrix(a: &Rot6d) -> Result<RotMat> {
    rot6d_to_matrix_eps(a, DEFAULT_GS_EPS)
}

pub fn rot6d_to_matrix_eps(a: &Rot6d, eps: f64) -> Result<RotMat> {
    let gs = GramSchmidt::new(a, eps)?;
    Ok(RotMat(Matrix3::from_columns(&[gs.b1, gs.b2, gs.b3])))
}

/// Returns the first two columns of `r`. Validates `r` first.
pub fn matrix_to_rot6d(r: &Matrix3<f64>) -> Result<Rot6d> {
    Ok(RotMat::new(*r)?.to_rot6d())
}

/// The pose-increment operator: `delta ⊕ prev = R(delta) · R(prev)`, back to 6D.
pub fn compose_rot6d(delta: &Rot6d, prev: &Rot6d) -> Result<Rot6d> {
    let d = rot6d_to_matrix(delta)?;
    let p = rot6d_to_matrix(prev)?;
    Ok(d.mul(&p).to_rot6d())
}

/// Rodrigues formula. The zero vector maps to the identity.
pub fn axis_angle_to_matrix(v: &AxisAngle) -> RotMat {
    let theta = v.0.norm();
    if theta < 1e-12 {
        // second-order expansion keeps tiny angles accurate
        let k = skew(&v.0);
        return RotMat(Matrix3::identity() + k + 0.5 * k * k);
    }
    let axis = v.0 / theta;
    let k = skew(&axis);
    let (s, c) = theta.sin_cos();
    RotMat(Matrix3::identity() + s * k + (1.0 - c) * k * k)
}

/// Inverse Rodrigues. The returned angle lies in `[0, π]`; at exactly `π` the
/// axis is chosen so that its first nonzero component is positive.
pub fn matrix_to_axis_angle(r: &Matrix3<f64>) -> Result<AxisAngle> {
    let r = RotMat::new(*r)?.into_inner();
    let vee = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let s = 0.5 * vee.norm();
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = s.atan2(c);

    if angle < 1e-10 {
        return Ok(AxisAngle(0.5 * vee));
    }
    if angle < 0.5 * PI || s > 1e-3 {
        return Ok(AxisAngle(vee * (angle / (2.0 * s))));
    }

    // Close to a half turn: recover the axis from the symmetric part.
    let sym = 0.5 * (r + r.transpose()) - Matrix3::identity() * c;
    let (mut best, mut best_val) = (0, sym[(0, 0)]);
    for i in 1..3 {
        if sym[(i, i)] > best_val {
            best = i;
            best_val = sym[(i, i)];
        }
    }
    let mut axis: Vector3<f64> = sym.column(best).into_owned();
    axis /= axis.norm();
    if s > 1e-12 {
        if axis.dot(&vee) < 0.0 {
            axis = -axis;
        }
    } else {
        canonicalize_half_turn_axis(&mut axis);
    }
    Ok(AxisAngle(axis * angle))
}

fn canonicalize_half_turn_axis(axis: &mut Vector3<f64>) {
    if let Some(first) = axis.iter().copied().find(|v| v.abs() > 1e-12) {
        if first < 0.0 {
            *axis = -*axis;
        }
    }
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Intermediate values of the Gram-Schmidt decode, kept for backpropagation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GramSchmidt {
    a2: Vector3<f64>,
    n1: f64,
    nu: f64,
    d: f64,
    b1: Vector3<f64>,
    b2: Vector3<f64>,
    b3: Vector3<f64>,
}

impl GramSchmidt {
    pub(crate) fn new(a: &Rot6d, eps: f64) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::DegenerateRot6d("non-finite entries".into()));
        }
        let a1 = a.first();
        let a2 = a.second();
        let n1 = a1.norm();
        if n1 < eps {
            return Err(Error::DegenerateRot6d(format!(
                "first column norm {n1:e} below {eps:e}"
            )));
        }
        let b1 = a1 / n1;
        let d = b1.dot(&a2);
        let u = a2 - b1 * d;
        let nu = u.norm();
        if nu < eps {
            return Err(Error::DegenerateRot6d(format!(
                "second column residual {nu:e} below {eps:e}"
            )));
        }
        let b2 = u / nu;
        let b3 = b1.cross(&b2);
        Ok(GramSchmidt {
            a2,
            n1,
            nu,
            d,
            b1,
            b2,
            b3,
        })
    }

    pub(crate) fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.b1, self.b2, self.b3])
    }

    /// Pulls a gradient w.r.t. the decoded matrix back to the 6 raw coordinates.
    pub(crate) fn backward(&self, grad: &Matrix3<f64>) -> [f64; 6] {
        let g1: Vector3<f64> = grad.column(0).into_owned();
        let g2: Vector3<f64> = grad.column(1).into_owned();
        let g3: Vector3<f64> = grad.column(2).into_owned();

        // b3 = b1 x b2
        let mut gb1 = g1 + self.b2.cross(&g3);
        let gb2 = g2 + g3.cross(&self.b1);

        // b2 = u / |u|
        let gu = (gb2 - self.b2 * self.b2.dot(&gb2)) / self.nu;

        // u = a2 - d b1, d = b1 . a2
        let gd = -self.b1.dot(&gu);
        let ga2 = gu + self.b1 * gd;
        gb1 += -gu * self.d + self.a2 * gd;

        // b1 = a1 / |a1|
        let ga1 = (gb1 - self.b1 * self.b1.dot(&gb1)) / self.n1;
        [ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z]
    }
}

/// Vector-Jacobian product of [`rot6d_to_matrix`]: maps `dL/dR` to `dL/da`.
pub fn rot6d_to_matrix_vjp(a: &Rot6d, grad: &Matrix3<f64>) -> Result<[f64; 6]> {
    Ok(GramSchmidt::new(a, DEFAULT_GS_EPS)?.backward(grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rz90() -> Matrix3<f64> {
        Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn identity_decodes() {
        let r = rot6d_to_matrix(&Rot6d::IDENTITY).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
    }

    #[test]
    fn scaled_columns_normalize() {
        let r = rot6d_to_matrix(&Rot6d([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
    }

    #[test]
    fn rz90_columns() {
        let r = rot6d_to_matrix(&Rot6d([0.0, 1.0, 0.0, -1.0, 0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(*r.matrix(), rz90(), epsilon = 1e-15);
        let a = matrix_to_rot6d(&rz90()).unwrap();
        assert_eq!(a, Rot6d([0.0, 1.0, 0.0, -1.0, 0.0, 0.0]));
        assert_eq!(
            matrix_to_rot6d(&Matrix3::identity()).unwrap(),
            Rot6d::IDENTITY
        );
    }

    #[test]
    fn degenerate_inputs_error() {
        let zero_first = Rot6d([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            rot6d_to_matrix(&zero_first),
            Err(Error::DegenerateRot6d(_))
        ));
        let parallel = Rot6d([1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(matches!(
            rot6d_to_matrix(&parallel),
            Err(Error::DegenerateRot6d(_))
        ));
        let nan = Rot6d([f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(rot6d_to_matrix(&nan).is_err());
    }

    #[test]
    fn not_a_rotation_rejected() {
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            matrix_to_rot6d(&reflect),
            Err(Error::NotARotation(_))
        ));
        let scaled = Matrix3::identity() * 2.0;
        assert!(matrix_to_axis_angle(&scaled).is_err());
    }

    #[test]
    fn compose_planar() {
        let a30 = RotMat::rot_z(PI / 6.0).to_rot6d();
        let a60 = RotMat::rot_z(PI / 3.0).to_rot6d();
        let out = compose_rot6d(&a30, &a60).unwrap();
        let expect = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (o, e) in out.0.iter().zip(expect) {
            assert_abs_diff_eq!(*o, e, epsilon = 1e-15);
        }
        let a = Rot6d([0.3, -0.2, 0.9, 0.1, 0.8, 0.2]);
        let b = compose_rot6d(&a, &Rot6d::IDENTITY).unwrap();
        let expect = rot6d_to_matrix(&a).unwrap().to_rot6d();
        for (o, e) in b.0.iter().zip(expect.0) {
            assert_abs_diff_eq!(*o, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn axis_angle_cases() {
        assert_eq!(
            *axis_angle_to_matrix(&AxisAngle::new(0.0, 0.0, 0.0)).matrix(),
            Matrix3::identity()
        );
        assert_abs_diff_eq!(
            *axis_angle_to_matrix(&AxisAngle::new(0.0, 0.0, PI / 2.0)).matrix(),
            rz90(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            *axis_angle_to_matrix(&AxisAngle::new(PI, 0.0, 0.0)).matrix(),
            Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
            epsilon = 1e-15
        );
        let v = matrix_to_axis_angle(&Matrix3::identity()).unwrap();
        assert_eq!(v.0, Vector3::zeros());
        let v = matrix_to_axis_angle(&rz90()).unwrap();
        assert_abs_diff_eq!(v.0, Vector3::new(0.0, 0.0, PI / 2.0), epsilon = 1e-15);
    }

    #[test]
    fn half_turn_sign_is_canonical() {
        for axis in [
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, -0.6, 0.8),
            Vector3::new(0.0, 0.6, -0.8),
        ] {
            let r = axis_angle_to_matrix(&AxisAngle(axis * PI));
            let v = matrix_to_axis_angle(r.matrix()).unwrap();
            assert_abs_diff_eq!(v.angle(), PI, epsilon = 1e-9);
            let first = v.0.iter().copied().find(|x| x.abs() > 1e-9).unwrap();
            assert!(first > 0.0, "{v:?}");
            assert_abs_diff_eq!(
                *axis_angle_to_matrix(&v).matrix(),
                *r.matrix(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn vjp_matches_central_differences() {
        let a = Rot6d([0.7, -0.3, 0.4, 0.2, 1.1, -0.5]);
        let w = Matrix3::new(0.3, -1.2, 0.5, 0.9, 0.1, -0.4, 0.25, 0.6, -0.8);
        let f = |a: &Rot6d| rot6d_to_matrix(a).unwrap().matrix().component_mul(&w).sum();
        let g = rot6d_to_matrix_vjp(&a, &w).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut p = a;
            let mut m = a;
            p.0[i] += h;
            m.0[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-8);
        }
    }
}
