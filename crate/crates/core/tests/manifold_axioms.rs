use nalgebra::{DVector, Matrix3, Vector3};
use proptest::prelude::*;
use slamkit::manifold::{exp_rotvec, ManifoldPoint, Rotation, UnitQuaternion};

const TOL: f64 = 1e-10;
const CASES: u32 = 10_000;

/// Rotation vector with norm at most 3 (inside the chart).
fn rotvec() -> impl Strategy<Value = Vector3<f64>> {
    (prop::array::uniform3(-1.0f64..1.0), 0.0f64..3.0).prop_map(|(d, a)| {
        let v = Vector3::from(d);
        let n = v.norm();
        if n < 1e-9 {
            Vector3::zeros()
        } else {
            v * (a / n)
        }
    })
}

fn quaternion() -> impl Strategy<Value = UnitQuaternion> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("non-degenerate", |c| c.iter().map(|v| v * v).sum::<f64>() > 1e-3)
        .prop_map(|c| UnitQuaternion::new(c[0], c[1], c[2], c[3]))
}

fn euclid(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, n)
}

/// Pose-like product: quaternion, rotation matrix, 3-vector.
fn product() -> impl Strategy<Value = ManifoldPoint> {
    (quaternion(), quaternion(), euclid(3)).prop_map(|(q, r, t)| {
        ManifoldPoint::Product(vec![
            ManifoldPoint::Quaternion(q),
            ManifoldPoint::Rotation(Rotation::from_matrix(&r.to_rotation_matrix())),
            ManifoldPoint::euclidean(&t),
        ])
    })
}

fn product_delta() -> impl Strategy<Value = Vec<f64>> {
    (rotvec(), rotvec(), euclid(3)).prop_map(|(a, b, t)| {
        let mut d = a.as_slice().to_vec();
        d.extend_from_slice(b.as_slice());
        d.extend(t);
        d
    })
}

/// Same-rotation distance, insensitive to the quaternion sign.
fn quat_distance(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    let (a, b) = (a.coords(), b.coords());
    let minus: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
    let plus: f64 = a.iter().zip(&b).map(|(x, y)| (x + y).powi(2)).sum();
    minus.min(plus).sqrt()
}

fn point_distance(a: &ManifoldPoint, b: &ManifoldPoint) -> f64 {
    match (a, b) {
        (ManifoldPoint::Euclidean(x), ManifoldPoint::Euclidean(y)) => (x - y).norm() / (1.0 + y.norm()),
        (ManifoldPoint::Quaternion(x), ManifoldPoint::Quaternion(y)) => quat_distance(x, y),
        (ManifoldPoint::Rotation(x), ManifoldPoint::Rotation(y)) => (x.matrix() - y.matrix()).norm(),
        (ManifoldPoint::Product(x), ManifoldPoint::Product(y)) => {
            x.iter().zip(y).map(|(p, q)| point_distance(p, q)).fold(0.0, f64::max)
        }
        _ => f64::INFINITY,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn boxplus_of_boxminus_recovers_the_point(x in product(), d in product_delta()) {
        let y = x.boxplus(&d).unwrap();
        let back = x.boxplus(y.boxminus(&x).unwrap().as_slice()).unwrap();
        prop_assert!(point_distance(&back, &y) < TOL);
    }

    #[test]
    fn boxminus_of_boxplus_recovers_the_step(x in product(), d in product_delta()) {
        let got = x.boxplus(&d).unwrap().boxminus(&x).unwrap();
        let want = DVector::from_vec(d);
        prop_assert!((&got - &want).norm() <= TOL * (1.0 + want.norm()));
    }

    #[test]
    fn quaternion_log_inverts_exp(w in rotvec()) {
        let back = UnitQuaternion::exp(&w).unwrap().log().unwrap();
        prop_assert!((back - w).norm() < TOL);
    }

    #[test]
    fn quaternion_exp_inverts_log(q in quaternion()) {
        prop_assume!(q.canonical().scalar() > 1e-6);
        let back = UnitQuaternion::exp(&q.log().unwrap()).unwrap();
        prop_assert!(quat_distance(&back, &q) < TOL);
    }

    #[test]
    fn rotation_log_inverts_exp(w in rotvec()) {
        let back = Rotation::exp(&w).unwrap().log().unwrap();
        prop_assert!((back - w).norm() < TOL);
    }

    #[test]
    fn quaternion_and_matrix_exponentials_agree(w in rotvec()) {
        let q = UnitQuaternion::exp(&w).unwrap();
        prop_assert!((q.to_rotation_matrix() - exp_rotvec(&w)).norm() < TOL);
        prop_assert!((Rotation::exp(&w).unwrap().matrix() - exp_rotvec(&w)).norm() < TOL);
    }

    #[test]
    fn quaternion_matrix_round_trip(q in quaternion()) {
        let r = q.to_rotation_matrix();
        prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < TOL);
        prop_assert!((r.determinant() - 1.0).abs() < TOL);
        prop_assert!(quat_distance(&UnitQuaternion::from_rotation_matrix(&r), &q) < TOL);
    }

    #[test]
    fn hamilton_product_matches_matrix_product(a in quaternion(), b in quaternion(), p in prop::array::uniform3(-10.0f64..10.0)) {
        let p = Vector3::from(p);
        prop_assert!(((a * b).to_rotation_matrix() - a.to_rotation_matrix() * b.to_rotation_matrix()).norm() < TOL);
        prop_assert!((a.rotate(&p) - a.to_rotation_matrix() * p).norm() < TOL * 10.0);
    }
}

#[test]
fn quarter_turn_about_z() {
    let q = UnitQuaternion::exp(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)).unwrap();
    let s = std::f64::consts::FRAC_PI_4;
    let want = [s.cos(), 0.0, 0.0, s.sin()];
    for (a, b) in q.coords().iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn log_at_pi_is_a_domain_error() {
    let q = UnitQuaternion::new(0.0, 1.0, 0.0, 0.0);
    assert!(q.log().is_err());
}
