use approx::assert_relative_eq;
use idhand::camera::Keypoints2d;
use idhand::hand_model::{HandParams, Keypoints3d, Mesh, NUM_KEYPOINTS};
use idhand::metrics::{
    heatmap_bce, heatmap_decode, heatmap_target, mesh_losses, mpjpe, param_losses, Heatmap,
};
use idhand::personalization::{attention_weights, ranking_pairs};
use idhand::rotation::Rot6d;
use idhand::synth::random_pose;
use idhand::synth_toy_model;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

// Unit face normal against each unit predicted edge, summed per face.
fn mesh_oracle(pred: &Mesh, gt: &Mesh) -> (f64, f64, f64) {
    let l_mesh = pred
        .vertices
        .iter()
        .zip(&gt.vertices)
        .map(|(p, g)| sub(*p, *g).iter().map(|d| d.abs()).sum::<f64>())
        .sum();
    let (mut l_norm, mut l_edge) = (0.0, 0.0);
    for f in &gt.faces {
        let [a, b, c] = f.map(|i| gt.vertices[i]);
        let n = cross(sub(b, a), sub(c, a));
        let n = n.map(|x| x / norm(n));
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            let e = sub(pred.vertices[f[j]], pred.vertices[f[i]]);
            l_norm += (dot(e, n) / norm(e)).abs();
            l_edge += (norm(e) - norm(sub(gt.vertices[f[j]], gt.vertices[f[i]]))).abs();
        }
    }
    (l_mesh, l_norm, l_edge)
}

fn posed_mesh(seed: u64) -> Mesh {
    let model = synth_toy_model(4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = HandParams {
        shape: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        pose: random_pose(&mut rng, 1.0, 0.5),
        root: [0.0, 0.0, 0.5],
    };
    model.forward(&params).unwrap().0
}

#[test]
fn mesh_losses_match_direct_sums() {
    for seed in 0..5 {
        let gt = posed_mesh(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut pred = gt.clone();
        for v in &mut pred.vertices {
            for c in v.iter_mut() {
                *c += rng.random_range(-0.003..0.003);
            }
        }
        let got = mesh_losses(&pred, &gt).unwrap();
        let (l_mesh, l_norm, l_edge) = mesh_oracle(&pred, &gt);
        assert_relative_eq!(got.l_mesh, l_mesh, max_relative = 1e-12);
        assert_relative_eq!(got.l_norm, l_norm, max_relative = 1e-9);
        assert_relative_eq!(got.l_edge, l_edge, max_relative = 1e-9);
    }
}

#[test]
fn identical_meshes_have_zero_losses() {
    let gt = posed_mesh(7);
    let got = mesh_losses(&gt, &gt).unwrap();
    assert_eq!((got.l_mesh, got.l_norm, got.l_edge), (0.0, 0.0, 0.0));
}

fn heatmap_with(data: Vec<f64>, h: usize, w: usize) -> Heatmap {
    Heatmap { height: h, width: w, data }
}

#[test]
fn bce_matches_elementwise_formula() {
    let (h, w) = (4, 5);
    let n = NUM_KEYPOINTS * h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
    let gt: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let expect = pred
        .iter()
        .zip(&gt)
        .map(|(p, g)| -(g * p.ln() + (1.0 - g) * (1.0 - p).ln()))
        .sum::<f64>()
        / n as f64;
    let got = heatmap_bce(&heatmap_with(pred, h, w), &heatmap_with(gt, h, w)).unwrap();
    assert_relative_eq!(got, expect, max_relative = 1e-12);
}

#[test]
fn bce_is_bounded_by_the_clamp() {
    let (h, w) = (2, 2);
    let n = NUM_KEYPOINTS * h * w;
    let got = heatmap_bce(&heatmap_with(vec![0.0; n], h, w), &heatmap_with(vec![1.0; n], h, w)).unwrap();
    assert_relative_eq!(got, -(1e-7f64).ln(), max_relative = 1e-12);
    assert!(got.is_finite());
}

#[test]
fn param_losses_match_elementwise_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut r6 = || Rot6d(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
    let a: [Rot6d; 16] = std::array::from_fn(|_| r6());
    let b: [Rot6d; 16] = std::array::from_fn(|_| r6());
    let sa = [0.5; 10];
    let sb: [f64; 10] = std::array::from_fn(|i| i as f64 * 0.1);
    let got = param_losses(&a, &b, &sa, &sb);
    let mut pose = 0.0;
    for j in 0..16 {
        for c in 0..6 {
            pose += (a[j].0[c] - b[j].0[c]).abs();
        }
    }
    assert_relative_eq!(got.l_pose, pose, max_relative = 1e-12);
    assert_relative_eq!(got.l_shape, 2.5, max_relative = 1e-12);
}

fn keypoints() -> impl Strategy<Value = Keypoints3d> {
    prop::array::uniform21(prop::array::uniform3(-0.2f64..0.2)).prop_map(Keypoints3d)
}

proptest! {
    #[test]
    fn mpjpe_symmetric_and_translation_invariant(
        a in keypoints(),
        b in keypoints(),
        t in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let shifted = Keypoints3d(a.0.map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]));
        prop_assert!((mpjpe(&a, &b) - mpjpe(&b, &a)).abs() < 1e-12);
        prop_assert!((mpjpe(&shifted, &b) - mpjpe(&a, &b)).abs() < 1e-9);
        prop_assert!(mpjpe(&a, &shifted) < 1e-9);
    }

    #[test]
    fn heatmap_round_trip_on_integer_pixels(cols in prop::array::uniform21(0usize..32), rows in prop::array::uniform21(0usize..24)) {
        let points: Vec<[f64; 2]> = cols.iter().zip(&rows).map(|(&c, &r)| [c as f64, r as f64]).collect();
        let kp = Keypoints2d::new(points.clone());
        let hm = heatmap_target(&kp, 24, 32, 1.5).unwrap();
        let (back, peaks) = heatmap_decode(&hm, 0.5).unwrap();
        prop_assert_eq!(back.points, points);
        prop_assert!(peaks.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn attention_weights_are_a_monotone_distribution(c in prop::collection::vec(-3.0f64..3.0, 1..30), t in 0.05f64..2.0) {
        let w = attention_weights(&c, t).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..c.len() {
            for j in 0..c.len() {
                if c[i] > c[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn ranking_loss_vanishes_when_confidences_order_errors(e in prop::collection::vec(0.0f64..5.0, 2..12)) {
        let c: Vec<f64> = e.iter().map(|v| -v).collect();
        prop_assert_eq!(ranking_pairs(&c, &e, 0.0).unwrap(), 0.0);
        let pairs = (0..e.len()).flat_map(|i| (i + 1..e.len()).map(move |j| (i, j)));
        let expect: f64 = pairs.map(|(i, j)| if e[i] == e[j] { 0.0 } else { (e[i] - e[j]).abs() }).sum();
        prop_assert!((ranking_pairs(&e, &e, 0.0).unwrap() - expect).abs() < 1e-9);
    }
}
