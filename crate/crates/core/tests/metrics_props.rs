use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use slamkit::manifold::{exp_rotvec, UnitQuaternion};
use slamkit::metrics::{evaluate, rotation_angle, umeyama_align, Pose, Trajectory};

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-r..r).prop_map(Vector3::from)
}

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    vec3(1.0).prop_map(|w| exp_rotvec(&(w * 3.0)))
}

/// Point cloud spread in all three directions.
fn cloud() -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(vec3(20.0), 4..60).prop_filter("spread", |pts| {
        let n = pts.len() as f64;
        let mean = pts.iter().sum::<Vector3<f64>>() / n;
        let cov = pts.iter().map(|p| (p - mean) * (p - mean).transpose()).sum::<Matrix3<f64>>() / n;
        cov.symmetric_eigen().eigenvalues.min() > 1.0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn umeyama_recovers_a_rigid_transform(src in cloud(), r in rotation(), t in vec3(50.0)) {
        let dst: Vec<_> = src.iter().map(|p| r * p + t).collect();
        let a = umeyama_align(&src, &dst).unwrap();
        let rmse = (src.iter().zip(&dst).map(|(s, d)| (a.apply(s) - d).norm_squared()).sum::<f64>() / src.len() as f64).sqrt();
        prop_assert!(rmse <= 1e-9, "rmse {rmse}");
        prop_assert!((a.rotation.determinant() - 1.0).abs() <= 1e-12);
        prop_assert!((a.rotation - r).norm() <= 1e-9);
    }

    #[test]
    fn alignment_is_always_proper(src in cloud()) {
        let mirror = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let dst: Vec<_> = src.iter().map(|p| mirror * p).collect();
        let a = umeyama_align(&src, &dst).unwrap();
        prop_assert!((a.rotation.determinant() - 1.0).abs() <= 1e-12);
        prop_assert!((a.rotation.transpose() * a.rotation - Matrix3::identity()).norm() <= 1e-12);
    }

    #[test]
    fn rotation_angle_is_the_rotation_vector_norm(w in vec3(1.0)) {
        let w = w * 3.0;
        prop_assume!(w.norm() < std::f64::consts::PI - 1e-6);
        prop_assert!((rotation_angle(&exp_rotvec(&w)) - w.norm()).abs() <= 1e-9);
    }

    #[test]
    fn evaluation_is_invariant_to_a_rigid_transform_of_the_estimate(r in rotation(), t in vec3(10.0), n in 20usize..80) {
        let gt = Trajectory {
            poses: (0..n)
                .map(|k| {
                    let s = k as f64 * 0.1;
                    Pose { t: s, position: Vector3::new(5.0 * s.cos(), 5.0 * s.sin(), 0.3 * s), rotation: exp_rotvec(&Vector3::new(0.0, 0.1, s)) }
                })
                .collect(),
        };
        let est = Trajectory {
            poses: gt
                .poses
                .iter()
                .enumerate()
                .map(|(k, p)| Pose { t: p.t, position: r * p.position + t + Vector3::new(0.01 * (k as f64).sin(), 0.0, 0.0), rotation: r * p.rotation })
                .collect(),
        };
        let ev = evaluate(&est, &gt).unwrap();
        prop_assert!(ev.aligned);
        prop_assert_eq!(ev.matched, n);
        prop_assert!(ev.rmse.translation <= 0.01);
        prop_assert!(ev.rmse.rotation <= 0.5, "rotation {} deg", ev.rmse.rotation);
    }
}

#[test]
fn quaternion_poses_load_into_trajectories() {
    let q = UnitQuaternion::exp(&Vector3::new(0.1, 0.2, 0.3)).unwrap();
    let p = slamkit::factors::models::spatial_pose_point(q, Vector3::new(1.0, 2.0, 3.0));
    let tr = Trajectory::from_points(&[(0.0, p)]).unwrap();
    assert!((tr.poses[0].rotation - q.to_rotation_matrix()).norm() < 1e-15);
    assert_eq!(tr.poses[0].position, Vector3::new(1.0, 2.0, 3.0));
}
