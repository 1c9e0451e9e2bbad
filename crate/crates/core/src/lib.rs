//! Identity-aware hand mesh toolkit.
//!
//! - [`hand_model`]: MANO-compatible parametric hand (shape/pose blendshapes,
//!   linear blend skinning, 21 keypoints).
//! - [`rotation`]: 6D rotation representation and axis-angle interchange.
//! - [`camera`]: pinhole projection and root initialization.
//! - [`regressor`]: forward passes of the pose, shape and confidence heads.
//! - [`fit`]: two-stage reprojection fitting of root and pose.
//! - [`personalization`]: confidence-weighted shape calibration across images.
//! - [`metrics`]: evaluation metrics, training losses and heatmap utilities.
//! - [`records`]: JSON file formats for predictions, fits and reports.
//! - [`synth`]: seeded synthetic subjects and predictions.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod camera;
pub mod error;
pub mod fit;
pub mod gradcheck;
pub mod hand_model;
pub mod metrics;
pub mod personalization;
pub mod records;
pub mod regressor;
pub mod rotation;
pub mod synth;
pub mod toy;

pub use camera::{project, CameraIntrinsics, Keypoints2d};
pub use error::{Error, Result};
pub use fit::{fit_two_stage, FitConfig, FitResult};
pub use hand_model::{load_model, HandModel, HandParams, Keypoints3d, Mesh};
pub use personalization::{attention_weights, calibrate_shape, CalibrationMode, CalibrationResult};
pub use rotation::{AxisAngle, Rot6d, RotMat};
pub use toy::synth_toy_model;
