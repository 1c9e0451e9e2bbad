use idhand::rotation::{axis_angle_to_matrix, compose_rot6d, matrix_to_axis_angle, matrix_to_rot6d, AxisAngle, Rot6d};
use idhand::Error;
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

fn axis_angle() -> impl Strategy<Value = AxisAngle> {
    (prop::array::uniform3(-1.0f64..1.0), 0.0f64..3.1)
        .prop_filter("axis must be nonzero", |(a, _)| Vector3::from(*a).norm() > 1e-3)
        .prop_map(|(a, angle)| AxisAngle(Vector3::from(a).normalize() * angle))
}

fn raw6d() -> impl Strategy<Value = Rot6d> {
    prop::array::uniform6(-5.0f64..5.0).prop_filter("columns must be independent", |a| {
        let (u, v) = (Vector3::new(a[0], a[1], a[2]), Vector3::new(a[3], a[4], a[5]));
        u.norm() > 1e-3 && u.cross(&v).norm() > 1e-3 * u.norm() * v.norm()
    }).prop_map(Rot6d)
}

proptest! {
    #[test]
    fn decoded_matrices_are_rotations(a in raw6d()) {
        let m = a.to_matrix().unwrap().into_inner();
        prop_assert!((m.transpose() * m - Matrix3::identity()).abs().max() < 1e-12);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decode_ignores_positive_column_scale(a in raw6d(), s in 0.1f64..10.0, t in 0.1f64..10.0) {
        let scaled = Rot6d([a.0[0] * s, a.0[1] * s, a.0[2] * s, a.0[3] * t, a.0[4] * t, a.0[5] * t]);
        let d = a.to_matrix().unwrap().into_inner() - scaled.to_matrix().unwrap().into_inner();
        prop_assert!(d.abs().max() < 1e-12);
    }

    #[test]
    fn first_column_is_normalized_input(a in raw6d()) {
        let m = a.to_matrix().unwrap().into_inner();
        let u = a.first().normalize();
        prop_assert!((m.column(0) - u).abs().max() < 1e-12);
    }

    #[test]
    fn six_d_round_trip(aa in axis_angle()) {
        let r = axis_angle_to_matrix(&aa);
        let back = matrix_to_rot6d(r.matrix()).unwrap().to_matrix().unwrap();
        prop_assert!((r.matrix() - back.matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn axis_angle_round_trip(aa in axis_angle()) {
        let back = matrix_to_axis_angle(axis_angle_to_matrix(&aa).matrix()).unwrap();
        prop_assert!((back.0 - aa.0).abs().max() < 1e-9, "{:?} vs {:?}", back.0, aa.0);
    }

    #[test]
    fn composition_matches_matrix_product(a in axis_angle(), b in axis_angle()) {
        let (ra, rb) = (axis_angle_to_matrix(&a), axis_angle_to_matrix(&b));
        let c = compose_rot6d(&ra.to_rot6d(), &rb.to_rot6d()).unwrap().to_matrix().unwrap();
        prop_assert!((c.matrix() - ra.matrix() * rb.matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn identity_is_neutral_for_composition(a in raw6d()) {
        let m = a.to_matrix().unwrap();
        let left = compose_rot6d(&Rot6d::IDENTITY, &a).unwrap().to_matrix().unwrap();
        let right = compose_rot6d(&a, &Rot6d::IDENTITY).unwrap().to_matrix().unwrap();
        prop_assert!((left.matrix() - m.matrix()).abs().max() < 1e-12);
        prop_assert!((right.matrix() - m.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn parallel_columns_are_rejected(v in prop::array::uniform3(-2.0f64..2.0), s in -3.0f64..3.0) {
        let a = Rot6d([v[0], v[1], v[2], s * v[0], s * v[1], s * v[2]]);
        prop_assert!(matches!(a.to_matrix(), Err(Error::DegenerateRot6d(_))));
    }
}

#[test]
fn half_turn_axis_is_canonical() {
    for axis in [Vector3::new(-1.0, 0.0, 0.0), Vector3::new(0.0, -1.0, 0.0), Vector3::new(0.0, -0.6, -0.8)] {
        let r = axis_angle_to_matrix(&AxisAngle(axis * std::f64::consts::PI));
        let back = matrix_to_axis_angle(r.matrix()).unwrap();
        let first = back.0.iter().find(|v| v.abs() > 1e-9).copied().unwrap();
        assert!(first > 0.0, "{:?}", back.0);
        assert!((back.0 + axis * std::f64::consts::PI).norm() < 1e-9);
    }
}
