use nalgebra::{Matrix3, Vector3};

use super::SMALL_ANGLE;

/// Skew-symmetric matrix with `hat(a) * b == a × b`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues formula without a domain check.
pub fn exp_rotvec(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = hat(w);
    Matrix3::identity() + k * a + k * k * b
}

/// Right Jacobian of SO(3): `Exp(θ + δ) ≈ Exp(θ)·Exp(J_r(θ) δ)`.
pub fn jacobian_right(theta: &Vector3<f64>) -> Matrix3<f64> {
    let t2 = theta.norm_squared();
    let t = t2.sqrt();
    let (b, c) = if t < SMALL_ANGLE {
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        ((1.0 - t.cos()) / t2, (t - t.sin()) / (t2 * t))
    };
    let k = hat(theta);
    Matrix3::identity() - k * b + k * k * c
}

fn inv_jacobian_coeff(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    }
}

/// Inverse left Jacobian of SO(3): `Log(Exp(δ)·Exp(θ)) ≈ θ + J_l⁻¹(θ) δ`.
pub fn inv_jacobian_left(theta: &Vector3<f64>) -> Matrix3<f64> {
    let k = hat(theta);
    Matrix3::identity() - k * 0.5 + k * k * inv_jacobian_coeff(theta.norm())
}

/// Inverse right Jacobian of SO(3): `Log(Exp(θ)·Exp(δ)) ≈ θ + J_r⁻¹(θ) δ`.
pub fn inv_jacobian_right(theta: &Vector3<f64>) -> Matrix3<f64> {
    let k = hat(theta);
    Matrix3::identity() + k * 0.5 + k * k * inv_jacobian_coeff(theta.norm())
}
