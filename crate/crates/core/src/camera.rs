//! Pinhole projection and root-translation initialization.
//!
//! Pixel coordinates have their origin at the top-left corner, `u` to the
//! right and `v` down. Camera space is x right, y down, z forward (meters).

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand_model::{HandModel, HandParams, KP_MIDDLE_TIP, KP_WRIST, NUM_KEYPOINTS, NUM_SHAPE};

/// Points closer than this (meters) count as behind the camera.
pub const DEFAULT_Z_MIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let cam = CameraIntrinsics { fx, fy, cx, cy };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "camera needs fx > 0 and fy > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Projects one camera-space point; no depth check.
    #[inline]
    pub fn project_point(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// 21 detected keypoints in pixels with per-point visibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoints2d {
    pub points: Vec<[f64; 2]>,
    #[serde(default = "all_visible")]
    pub visible: Vec<bool>,
}

fn all_visible() -> Vec<bool> {
    vec![true; NUM_KEYPOINTS]
}

impl Keypoints2d {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        let n = points.len();
        Keypoints2d {
            points,
            visible: vec![true; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != NUM_KEYPOINTS {
            return Err(Error::mismatch("keypoints_2d.points", NUM_KEYPOINTS, self.points.len()));
        }
        if self.visible.len() != NUM_KEYPOINTS {
            return Err(Error::mismatch("keypoints_2d.visible", NUM_KEYPOINTS, self.visible.len()));
        }
        for (i, (p, vis)) in self.points.iter().zip(&self.visible).enumerate() {
            if *vis && !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "visible keypoint {i} is not finite"
                )));
            }
        }
        Ok(())
    }

    pub fn point(&self, i: usize) -> Vector2<f64> {
        Vector2::new(self.points[i][0], self.points[i][1])
    }

    pub fn visible_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.visible
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(i, _)| i)
    }
}

pub fn project(points: &[[f64; 3]], cam: &CameraIntrinsics) -> Result<Vec<[f64; 2]>> {
    project_with_z_min(points, cam, DEFAULT_Z_MIN)
}

pub fn project_with_z_min(
    points: &[[f64; 3]],
    cam: &CameraIntrinsics,
    z_min: f64,
) -> Result<Vec<[f64; 2]>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !(p[2] > z_min) {
                return Err(Error::BehindCamera(i));
            }
            Ok(cam.project_point(&Vector3::from(*p)).into())
        })
        .collect()
}

/// Estimates the root translation from 2D keypoints using the rest-pose hand.
///
/// Depth comes from the ratio of the model's wrist-to-middle-tip length to the
/// same length in pixels (or the widest visible pair when either end is
/// hidden). The visible-keypoint centroid is then back-projected at that
/// depth and the rest-pose centroid is moved onto it.
pub fn init_root(
    x_d: &Keypoints2d,
    model: &HandModel,
    shape: &[f64; NUM_SHAPE],
    cam: &CameraIntrinsics,
) -> Result<[f64; 3]> {
    x_d.validate()?;
    cam.validate()?;
    let vis: Vec<usize> = x_d.visible_indices().collect();
    if vis.len() < 2 {
        return Err(Error::TooFewKeypoints(format!(
            "{} visible keypoints, need at least 2",
            vis.len()
        )));
    }
    let rest = model.keypoints(&HandParams::with_shape(*shape))?;

    let (a, b) = if x_d.visible[KP_WRIST] && x_d.visible[KP_MIDDLE_TIP] {
        (KP_WRIST, KP_MIDDLE_TIP)
    } else {
        let mut best = (vis[0], vis[1], -1.0);
        for (i, &p) in vis.iter().enumerate() {
            for &q in &vis[i + 1..] {
                let d = (x_d.point(p) - x_d.point(q)).norm();
                if d > best.2 {
                    best = (p, q, d);
                }
            }
        }
        (best.0, best.1)
    };
    let len_px = (x_d.point(a) - x_d.point(b)).norm();
    let len_model = (rest.point(a) - rest.point(b)).norm();
    if !(len_px > 1e-9) || !(len_model > 1e-12) {
        return Err(Error::TooFewKeypoints("zero pixel extent".into()));
    }
    let depth = cam.fx * len_model / len_px;

    let n = vis.len() as f64;
    let c2 = vis.iter().map(|&i| x_d.point(i)).sum::<Vector2<f64>>() / n;
    let c3 = vis.iter().map(|&i| rest.point(i)).sum::<Vector3<f64>>() / n;
    let target = Vector3::new(
        (c2.x - cam.cx) * depth / cam.fx,
        (c2.y - cam.cy) * depth / cam.fy,
        depth,
    );
    Ok((target - c3).into())
}
