//! Procedural five-finger hand used as a test fixture and for synthetic data.
//!
//! The hand lies in the x-y plane with fingers pointing along +y and the wrist
//! at the origin. Each finger is a zig-zag triangle strip over four bone
//! segments (palm, proximal, middle, distal) ending in a fingertip vertex.
//!
//! Shape directions have fixed meanings:
//! - `shape_dirs[0]` scales the whole hand about the wrist (+10% per unit).
//! - `shape_dirs[1]` lengthens every finger about its MCP joint (+10% per unit).
//! - `shape_dirs[2..10]` are seeded random local deformations.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::hand_model::{HandModel, HandModelParts, NUM_JOINTS, NUM_POSE_COEFFS, NUM_SHAPE};

struct FingerSpec {
    joints: [usize; 3],
    tip_slot: usize,
    mcp: [f64; 3],
    dir: [f64; 3],
    lengths: [f64; 3],
}

const FINGERS: [FingerSpec; 5] = [
    FingerSpec {
        joints: [13, 14, 15],
        tip_slot: 0,
        mcp: [0.025, 0.020, -0.005],
        dir: [0.6, 0.8, 0.0],
        lengths: [0.035, 0.030, 0.025],
    },
    FingerSpec {
        joints: [1, 2, 3],
        tip_slot: 1,
        mcp: [0.024, 0.085, 0.0],
        dir: [0.05, 1.0, 0.0],
        lengths: [0.040, 0.025, 0.020],
    },
    FingerSpec {
        joints: [4, 5, 6],
        tip_slot: 2,
        mcp: [0.002, 0.090, 0.0],
        dir: [0.0, 1.0, 0.0],
        lengths: [0.045, 0.028, 0.021],
    },
    FingerSpec {
        joints: [10, 11, 12],
        tip_slot: 3,
        mcp: [-0.018, 0.085, 0.0],
        dir: [-0.05, 1.0, 0.0],
        lengths: [0.042, 0.026, 0.020],
    },
    FingerSpec {
        joints: [7, 8, 9],
        tip_slot: 4,
        mcp: [-0.036, 0.075, 0.0],
        dir: [-0.12, 1.0, 0.0],
        lengths: [0.032, 0.020, 0.018],
    },
];

const STRIP_HALF_WIDTH: f64 = 0.006;
const STRIP_HALF_DEPTH: f64 = 0.004;
const PARENT_BLEND_SPAN: f64 = 0.3;

/// Builds a deterministic toy model. `v_per_segment` is clamped to at least 2.
pub fn synth_toy_model(seed: u64, v_per_segment: usize) -> HandModel {
    let n = v_per_segment.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parents = vec![0i64; NUM_JOINTS];
    parents[0] = -1;

    let mut template: Vec<Vector3<f64>> = Vec::new();
    let mut skin: Vec<Vec<f64>> = Vec::new();
    let mut faces = Vec::new();
    let mut tips = vec![0usize; 5];
    let mut regressor = vec![vec![]; NUM_JOINTS];
    // (finger index, MCP position, whether the vertex lies beyond the MCP)
    let mut membership: Vec<(usize, Vector3<f64>, bool)> = Vec::new();

    for (f, finger) in FINGERS.iter().enumerate() {
        let [j1, j2, j3] = finger.joints;
        parents[j1] = 0;
        parents[j2] = j1 as i64;
        parents[j3] = j2 as i64;

        let mut mcp = Vector3::from(finger.mcp);
        for c in 0..2 {
            mcp[c] += 0.002 * rng.random_range(-1.0..1.0);
        }
        let dir = Vector3::from(finger.dir).normalize();
        let lengths: Vec<f64> = finger
            .lengths
            .iter()
            .map(|l| l * (1.0 + 0.05 * rng.random_range(-1.0..1.0)))
            .collect();
        let pip = mcp + dir * lengths[0];
        let dip = pip + dir * lengths[1];
        let tip = dip + dir * lengths[2];

        let perp = Vector3::z().cross(&dir).normalize();
        // (start, end, bone, parent bone)
        let segments = [
            (Vector3::zeros(), mcp, 0usize, None),
            (mcp, pip, j1, Some(0usize)),
            (pip, dip, j2, Some(j1)),
            (dip, tip, j3, Some(j2)),
        ];

        let strip_start = template.len();
        let mut seg_first = [0usize; 4];
        let mut seg_last = [0usize; 4];
        for (s, (a, b, bone, parent)) in segments.iter().enumerate() {
            seg_first[s] = template.len();
            for i in 0..n {
                let t = (i as f64 + 0.5) / n as f64;
                let sign = if (template.len() - strip_start).is_multiple_of(2) { 1.0 } else { -1.0 };
                let mut p = a + (b - a) * t
                    + perp * (sign * STRIP_HALF_WIDTH)
                    + Vector3::z() * (sign * STRIP_HALF_DEPTH);
                for c in 0..3 {
                    p[c] += 0.0005 * rng.random_range(-1.0..1.0);
                }
                let mut w = vec![0.0; NUM_JOINTS];
                match parent {
                    Some(pb) if t < PARENT_BLEND_SPAN => {
                        let blend = 0.5 * (PARENT_BLEND_SPAN - t) / PARENT_BLEND_SPAN;
                        w[*pb] = blend;
                        w[*bone] = 1.0 - blend;
                    }
                    _ => w[*bone] = 1.0,
                }
                template.push(p);
                skin.push(w);
                membership.push((f, mcp, s > 0));
            }
            seg_last[s] = template.len() - 1;
        }
        tips[finger.tip_slot] = template.len();
        template.push(tip);
        let mut w = vec![0.0; NUM_JOINTS];
        w[j3] = 1.0;
        skin.push(w);
        membership.push((f, mcp, true));

        let strip_end = template.len();
        for i in strip_start..strip_end - 2 {
            if (i - strip_start).is_multiple_of(2) {
                faces.push([i, i + 1, i + 2]);
            } else {
                faces.push([i + 1, i, i + 2]);
            }
        }

        regressor[0].push(seg_first[0]);
        for (s, &joint) in finger.joints.iter().enumerate() {
            regressor[joint] = vec![seg_last[s], seg_first[s + 1]];
        }
    }

    let v = template.len();
    let joint_regressor: Vec<Vec<f64>> = regressor
        .iter()
        .map(|idx| {
            let mut row = vec![0.0; v];
            for &i in idx {
                row[i] = 1.0 / idx.len() as f64;
            }
            row
        })
        .collect();

    let mut shape_dirs = Vec::with_capacity(NUM_SHAPE);
    shape_dirs.push(template.iter().map(|p| (p * 0.1).into()).collect::<Vec<[f64; 3]>>());
    shape_dirs.push(
        template
            .iter()
            .zip(&membership)
            .map(|(p, (_, mcp, beyond))| {
                if *beyond {
                    ((p - mcp) * 0.1).into()
                } else {
                    [0.0; 3]
                }
            })
            .collect(),
    );
    let local = Normal::new(0.0, 0.004).unwrap();
    let fine = Normal::new(0.0, 0.001).unwrap();
    for _ in 2..NUM_SHAPE {
        let per_finger: Vec<Vector3<f64>> = (0..5)
            .map(|_| Vector3::from_fn(|_, _| local.sample(&mut rng)))
            .collect();
        shape_dirs.push(
            membership
                .iter()
                .map(|(f, _, _)| {
                    let d = per_finger[*f] + Vector3::from_fn(|_, _| fine.sample(&mut rng));
                    d.into()
                })
                .collect(),
        );
    }

    let pose_noise = Normal::new(0.0, 2e-4).unwrap();
    let pose_dirs: Vec<Vec<[f64; 3]>> = (0..NUM_POSE_COEFFS)
        .map(|_| {
            (0..v)
                .map(|_| std::array::from_fn(|_| pose_noise.sample(&mut rng)))
                .collect()
        })
        .collect();

    HandModel::from_parts(HandModelParts {
        name: format!("toy-hand-seed{seed}-n{n}"),
        template: template.into_iter().map(Into::into).collect(),
        shape_dirs,
        pose_dirs: Some(pose_dirs),
        joint_regressor,
        skin_weights: skin,
        parents,
        faces,
        fingertip_vertices: tips,
    })
    .expect("toy model satisfies model invariants")
}
