use std::f64::consts::PI;

use bpnp::geometry::{
    log_rotation, objective, precise_objective, project, project_second_order, project_with_jets, rodrigues, unflatten2,
};
use bpnp::{Intrinsics, Pose};
use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-range..range).prop_map(Vector3::from)
}

/// Rotation vectors with angle below `pi - margin`.
fn rotation(margin: f64) -> impl Strategy<Value = Vector3<f64>> {
    vec3(PI).prop_filter("angle within range", move |w| w.norm() < PI - margin)
}

fn intrinsics() -> impl Strategy<Value = Intrinsics> {
    (300.0..1200.0, 300.0..1200.0, 200.0..600.0, 150.0..450.0)
        .prop_map(|(fx, fy, cx, cy)| Intrinsics::new(fx, fy, cx, cy).unwrap())
}

/// A pose with the unit cloud around the origin 2 to 6 units in front.
fn pose() -> impl Strategy<Value = Pose> {
    (rotation(1e-3), vec3(0.5), 2.0..6.0).prop_map(|(r, t, depth)| Pose::new(r, Vector3::new(t.x, t.y, depth)))
}

fn cloud(n: usize) -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(vec3(0.5), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rotation_round_trips_through_the_logarithm(w in rotation(1e-3)) {
        let back = log_rotation(&rodrigues(&w)).unwrap();
        prop_assert!((back - w).amax() <= 1e-9, "{w:?} -> {back:?}");
    }

    #[test]
    fn rodrigues_is_a_rotation(w in vec3(10.0)) {
        let r = rodrigues(&w);
        prop_assert!((r.transpose() * r - Matrix3::identity()).amax() <= 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn logarithm_angle_is_at_most_pi(w in vec3(10.0)) {
        prop_assert!(log_rotation(&rodrigues(&w)).unwrap().norm() <= PI + 1e-12);
    }

    #[test]
    fn rotations_wrapped_by_two_pi_are_equal(w in rotation(1e-3).prop_filter("nonzero", |w| w.norm() > 1e-3)) {
        let wrapped = w * (1.0 - 2.0 * PI / w.norm());
        prop_assert!((rodrigues(&w) - rodrigues(&wrapped)).amax() <= 1e-12);
    }

    #[test]
    fn first_order_jets_match_central_differences(
        pts in cloud(4), pose in pose(), k in intrinsics()
    ) {
        let jet = project_with_jets(&pts, &pose, &k).unwrap();
        let h = 1e-6;
        let y = pose.to_vector();
        for j in 0..6 {
            let mut plus = y;
            let mut minus = y;
            plus[j] += h;
            minus[j] -= h;
            let fd = (project(&pts, &Pose::from_vector(&plus), &k).unwrap()
                - project(&pts, &Pose::from_vector(&minus), &k).unwrap())
                / (2.0 * h);
            let err = (jet.d_pose.column(j) - &fd).amax() / fd.amax().max(1.0);
            prop_assert!(err <= 1e-6, "pose column {j}: {err:e}");
        }
        for c in 0..4 {
            let mut plus = k.to_array();
            let mut minus = k.to_array();
            plus[c] += h;
            minus[c] -= h;
            let fd = (project(&pts, &pose, &Intrinsics::from_array(plus)).unwrap()
                - project(&pts, &pose, &Intrinsics::from_array(minus)).unwrap())
                / (2.0 * h);
            let err = (jet.d_intrinsics.column(c) - &fd).amax() / fd.amax().max(1.0);
            prop_assert!(err <= 1e-6, "intrinsics column {c}: {err:e}");
        }
        let dense = jet.d_points_dense();
        for i in 0..pts.len() * 3 {
            let mut plus = pts.clone();
            let mut minus = pts.clone();
            plus[i / 3][i % 3] += h;
            minus[i / 3][i % 3] -= h;
            let fd = (project(&plus, &pose, &k).unwrap() - project(&minus, &pose, &k).unwrap()) / (2.0 * h);
            let err = (dense.column(i) - &fd).amax() / fd.amax().max(1.0);
            prop_assert!(err <= 1e-6, "point column {i}: {err:e}");
        }
    }

    #[test]
    fn second_order_jets_match_differences_of_gradients(
        pts in cloud(2), pose in pose(), k in intrinsics()
    ) {
        let base = project_second_order(&pts, &pose, &k).unwrap();
        let h = 1e-6;
        let y = pose.to_vector();
        for j in 0..6 {
            let mut plus = y;
            let mut minus = y;
            plus[j] += h;
            minus[j] -= h;
            let p = project_second_order(&pts, &Pose::from_vector(&plus), &k).unwrap();
            let m = project_second_order(&pts, &Pose::from_vector(&minus), &k).unwrap();
            for i in 0..pts.len() {
                for a in 0..2 {
                    let fd = (p[i].grad[a] - m[i].grad[a]) / (2.0 * h);
                    let exact = base[i].hess[a].column(j);
                    let err = (exact - fd).amax() / fd.amax().max(1.0);
                    prop_assert!(err <= 1e-5, "point {i} coord {a} column {j}: {err:e}");
                    let hess = &base[i].hess[a];
                    prop_assert!((hess - hess.transpose()).amax() <= 1e-12 * hess.amax().max(1.0));
                }
            }
        }
    }

    #[test]
    fn precise_objective_agrees_with_plain_objective(
        pts in cloud(6), pose in pose(), k in intrinsics(), noise in prop::collection::vec(-5.0..5.0f64, 12)
    ) {
        let mut x = unflatten2(project(&pts, &pose, &k).unwrap().as_slice());
        for (xi, e) in x.iter_mut().zip(noise.chunks_exact(2)) {
            *xi += Vector2::new(e[0], e[1]);
        }
        let plain = objective(&x, &pts, &pose, &k).unwrap();
        let precise = precise_objective(&x, &pts, &pose, &k).unwrap().to_f64();
        prop_assert!((plain - precise).abs() <= 1e-12 * plain.max(1.0));
    }
}
