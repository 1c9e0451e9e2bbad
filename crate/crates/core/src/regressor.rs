//! Forward passes of the parameter heads: iterative pose regressor, shape
//! head and one-layer confidence head. Weights are loaded, never trained here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand_model::{NUM_JOINTS, NUM_SHAPE};
use crate::rotation::{compose_rot6d, Rot6d};

pub const POSE_DIM: usize = 6 * NUM_JOINTS;
pub const DEFAULT_POSE_ITERATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// One affine layer; `weight` is `rows x cols`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Weight file contents. For the pose head the input is `cat(feature, pose)`,
/// so the first layer takes `feature_len + 96` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    pub feature_len: usize,
    pub layers: Vec<Layer>,
}

impl MlpWeights {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let w: MlpWeights = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        w.validate()?;
        Ok(w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn input_len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.cols)
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invariant("layers", "at least one layer required"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.len() != l.rows * l.cols {
                return Err(Error::mismatch(format!("layers[{i}].weight"), l.rows * l.cols, l.weight.len()));
            }
            if l.bias.len() != l.rows {
                return Err(Error::mismatch(format!("layers[{i}].bias"), l.rows, l.bias.len()));
            }
            if i > 0 && self.layers[i - 1].rows != l.cols {
                return Err(Error::mismatch(format!("layers[{i}].cols"), self.layers[i - 1].rows, l.cols));
            }
            if !l.weight.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::invariant(format!("layers[{i}]"), "non-finite value"));
            }
        }
        if self.layers.last().unwrap().activation != Activation::None {
            return Err(Error::invariant(
                format!("layers[{}].activation", self.layers.len() - 1),
                "final layer must have no activation",
            ));
        }
        Ok(())
    }
}

pub fn mlp_forward(w: &MlpWeights, x: &[f64]) -> Result<Vec<f64>> {
    w.validate()?;
    if x.len() != w.input_len() {
        return Err(Error::mismatch("mlp input", w.input_len(), x.len()));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature".into()));
    }
    let mut h = x.to_vec();
    for l in &w.layers {
        let mut out = l.bias.clone();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &l.weight[r * l.cols..(r + 1) * l.cols];
            *o += row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            if l.activation == Activation::Relu && *o < 0.0 {
                *o = 0.0;
            }
        }
        h = out;
    }
    Ok(h)
}

/// Iterative pose regression: `Δθ = MLP(cat(F, θ))`, `θ ← Δθ ⊕ θ`, starting
/// from all-identity rotations.
pub fn iterative_pose_regress(
    feat: &[f64],
    w: &MlpWeights,
    n_iter: usize,
) -> Result<[Rot6d; NUM_JOINTS]> {
    if n_iter == 0 {
        return Err(Error::InvalidArgument("n_iter must be at least 1".into()));
    }
    if feat.len() != w.feature_len {
        return Err(Error::mismatch("feature", w.feature_len, feat.len()));
    }
    if w.input_len() != w.feature_len + POSE_DIM {
        return Err(Error::mismatch("pose regressor input", w.feature_len + POSE_DIM, w.input_len()));
    }
    if w.output_len() != POSE_DIM {
        return Err(Error::mismatch("pose regressor output", POSE_DIM, w.output_len()));
    }
    let mut pose = [Rot6d::IDENTITY; NUM_JOINTS];
    let mut input = Vec::with_capacity(feat.len() + POSE_DIM);
    for _ in 0..n_iter {
        input.clear();
        input.extend_from_slice(feat);
        for r in &pose {
            input.extend_from_slice(&r.0);
        }
        let delta = mlp_forward(w, &input)?;
        for (k, p) in pose.iter_mut().enumerate() {
            let d: [f64; 6] = delta[6 * k..6 * k + 6].try_into().unwrap();
            *p = compose_rot6d(&Rot6d(d), p)?;
        }
    }
    Ok(pose)
}

/// Baseline shape head.
pub fn shape_regress(feat: &[f64], w: &MlpWeights) -> Result<[f64; NUM_SHAPE]> {
    if w.output_len() != NUM_SHAPE {
        return Err(Error::mismatch("shape head output", NUM_SHAPE, w.output_len()));
    }
    let out = mlp_forward(w, feat)?;
    Ok(out.try_into().unwrap())
}

/// Scalar confidence head.
pub fn confidence_regress(feat: &[f64], w: &MlpWeights) -> Result<f64> {
    if w.output_len() != 1 {
        return Err(Error::mismatch("confidence head output", 1, w.output_len()));
    }
    Ok(mlp_forward(w, feat)?[0])
}

/// Deterministic random weights for fixtures. `dims` lists layer widths from
/// input to output; hidden layers use ReLU.
pub fn synth_mlp_weights(seed: u64, feature_len: usize, dims: &[usize], scale: f64) -> MlpWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, d)| {
            let (cols, rows) = (d[0], d[1]);
            Layer {
                rows,
                cols,
                weight: (0..rows * cols).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
                bias: (0..rows).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
                activation: if i + 2 == dims.len() {
                    Activation::None
                } else {
                    Activation::Relu
                },
            }
        })
        .collect();
    MlpWeights { feature_len, layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{rot6d_to_matrix, RotMat};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn single(rows: usize, cols: usize, weight: Vec<f64>, bias: Vec<f64>) -> MlpWeights {
        MlpWeights {
            feature_len: cols,
            layers: vec![Layer {
                rows,
                cols,
                weight,
                bias,
                activation: Activation::None,
            }],
        }
    }

    #[test]
    fn zero_weights_give_bias() {
        let w = single(3, 4, vec![0.0; 12], vec![1.0, -2.0, 0.5]);
        assert_eq!(mlp_forward(&w, &[9.0, 8.0, 7.0, 6.0]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn identity_layer_passes_through() {
        let mut eye = vec![0.0; 9];
        eye[0] = 1.0;
        eye[4] = 1.0;
        eye[8] = 1.0;
        let w = single(3, 3, eye, vec![0.0; 3]);
        assert_eq!(mlp_forward(&w, &[0.3, -1.5, 2.0]).unwrap(), vec![0.3, -1.5, 2.0]);
    }

    #[test]
    fn two_layer_matches_matmul() {
        let w = synth_mlp_weights(5, 7, &[7, 5, 4], 0.8);
        let x: Vec<f64> = (0..7).map(|i| (i as f64 * 0.37).sin()).collect();
        let l0 = &w.layers[0];
        let l1 = &w.layers[1];
        let a0 = DMatrix::from_row_slice(l0.rows, l0.cols, &l0.weight);
        let a1 = DMatrix::from_row_slice(l1.rows, l1.cols, &l1.weight);
        let h = (a0 * nalgebra::DVector::from_vec(x.clone()) + nalgebra::DVector::from_vec(l0.bias.clone()))
            .map(|v| v.max(0.0));
        let y = a1 * h + nalgebra::DVector::from_vec(l1.bias.clone());
        let out = mlp_forward(&w, &x).unwrap();
        for (a, b) in out.iter().zip(y.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
        }
    }

    #[test]
    fn dimension_checks() {
        let w = single(2, 3, vec![0.0; 6], vec![0.0; 2]);
        assert!(matches!(mlp_forward(&w, &[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(shape_regress(&[0.0; 3], &w), Err(Error::DimensionMismatch { .. })));
        let mut bad = synth_mlp_weights(1, 4, &[4, 3, 2], 1.0);
        bad.layers[1].cols = 5;
        assert!(bad.validate().is_err());
        let mut relu_last = synth_mlp_weights(1, 4, &[4, 2], 1.0);
        relu_last.layers[0].activation = Activation::Relu;
        assert!(relu_last.validate().is_err());
    }

    #[test]
    fn shape_head_bias() {
        let b: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let w = single(10, 6, vec![0.0; 60], b.clone());
        assert_eq!(shape_regress(&[1.0; 6], &w).unwrap().to_vec(), b);
    }

    fn constant_pose_head(feature_len: usize, bias: Vec<f64>) -> MlpWeights {
        let cols = feature_len + POSE_DIM;
        MlpWeights {
            feature_len,
            layers: vec![Layer {
                rows: POSE_DIM,
                cols,
                weight: vec![0.0; POSE_DIM * cols],
                bias,
                activation: Activation::None,
            }],
        }
    }

    #[test]
    fn identity_increment_is_fixed_point() {
        let bias: Vec<f64> = (0..NUM_JOINTS).flat_map(|_| Rot6d::IDENTITY.0).collect();
        let w = constant_pose_head(4, bias);
        for n in 1..4 {
            let pose = iterative_pose_regress(&[0.1, 0.2, 0.3, 0.4], &w, n).unwrap();
            assert!(pose.iter().all(|r| *r == Rot6d::IDENTITY));
        }
    }

    #[test]
    fn repeated_planar_increment() {
        let mut bias: Vec<f64> = (0..NUM_JOINTS).flat_map(|_| Rot6d::IDENTITY.0).collect();
        bias[..6].copy_from_slice(&RotMat::rot_z(std::f64::consts::PI / 6.0).to_rot6d().0);
        let w = constant_pose_head(2, bias);
        let pose = iterative_pose_regress(&[1.0, -1.0], &w, DEFAULT_POSE_ITERATIONS).unwrap();
        let r = rot6d_to_matrix(&pose[0]).unwrap();
        assert_abs_diff_eq!(
            *r.matrix(),
            *RotMat::rot_z(std::f64::consts::FRAC_PI_2).matrix(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn degenerate_increment_errors() {
        let w = constant_pose_head(2, vec![0.0; POSE_DIM]);
        assert!(matches!(
            iterative_pose_regress(&[1.0, 2.0], &w, 1),
            Err(Error::DegenerateRot6d(_))
        ));
    }

    #[test]
    fn unrolled_loop_oracle() {
        let feature_len = 8;
        let mut w = synth_mlp_weights(9, feature_len, &[feature_len + POSE_DIM, 32, POSE_DIM], 0.05);
        // bias the output toward identity so increments stay well conditioned
        for (i, b) in w.layers[1].bias.iter_mut().enumerate() {
            *b += Rot6d::IDENTITY.0[i % 6];
        }
        let feat: Vec<f64> = (0..feature_len).map(|i| (i as f64).cos()).collect();
        let got = iterative_pose_regress(&feat, &w, 3).unwrap();

        let mut theta: Vec<f64> = (0..NUM_JOINTS).flat_map(|_| Rot6d::IDENTITY.0).collect();
        for _ in 0..3 {
            let mut input = feat.clone();
            input.extend_from_slice(&theta);
            let delta = mlp_forward(&w, &input).unwrap();
            let mut next = Vec::with_capacity(POSE_DIM);
            for k in 0..NUM_JOINTS {
                let d = rot6d_to_matrix(&Rot6d(delta[6 * k..6 * k + 6].try_into().unwrap())).unwrap();
                let p = rot6d_to_matrix(&Rot6d(theta[6 * k..6 * k + 6].try_into().unwrap())).unwrap();
                let m = d.matrix() * p.matrix();
                next.extend_from_slice(&[m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]);
            }
            theta = next;
        }
        for k in 0..NUM_JOINTS {
            for c in 0..6 {
                assert_abs_diff_eq!(got[k].0[c], theta[6 * k + c], epsilon = 1e-12);
            }
        }

        // one iteration equals one compose onto identity
        let one = iterative_pose_regress(&feat, &w, 1).unwrap();
        let mut input = feat.clone();
        input.extend((0..NUM_JOINTS).flat_map(|_| Rot6d::IDENTITY.0));
        let delta = mlp_forward(&w, &input).unwrap();
        for k in 0..NUM_JOINTS {
            let d = Rot6d(delta[6 * k..6 * k + 6].try_into().unwrap());
            assert_eq!(one[k], compose_rot6d(&d, &Rot6d::IDENTITY).unwrap());
        }
    }

    #[test]
    fn weight_file_round_trip() {
        let w = synth_mlp_weights(2, 5, &[5, 4, 1], 0.3);
        let back = MlpWeights::from_json(w.to_json().unwrap().as_bytes()).unwrap();
        assert_eq!(back, w);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(confidence_regress(&x, &back).unwrap(), mlp_forward(&w, &x).unwrap()[0]);
    }
}
