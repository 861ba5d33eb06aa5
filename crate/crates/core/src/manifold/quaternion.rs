use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use super::{ManifoldError, PI_MARGIN, SMALL_ANGLE};

/// Unit quaternion `(q_u, q_v)`, scalar part first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    v: Vector3<f64>,
}

impl UnitQuaternion {
    pub fn identity() -> Self {
        Self { w: 1.0, v: Vector3::zeros() }
    }

    /// Builds a quaternion from raw coefficients and normalizes it.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, v: Vector3::new(x, y, z) }.normalized()
    }

    /// Keeps coefficients that are already unit within `tol` bit-for-bit;
    /// `None` otherwise.
    pub fn from_unit_coords(w: f64, x: f64, y: f64, z: f64, tol: f64) -> Option<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        ((n - 1.0).abs() <= tol).then(|| Self { w, v: Vector3::new(x, y, z) })
    }

    pub fn scalar(&self) -> f64 {
        self.w
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.v
    }

    /// `[w, x, y, z]`.
    pub fn coords(&self) -> [f64; 4] {
        [self.w, self.v.x, self.v.y, self.v.z]
    }

    fn normalized(self) -> Self {
        let n = (self.w * self.w + self.v.norm_squared()).sqrt();
        Self { w: self.w / n, v: self.v / n }
    }

    pub fn inverse(&self) -> Self {
        Self { w: self.w, v: -self.v }
    }

    /// Representative with non-negative scalar part.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            Self { w: -self.w, v: -self.v }
        } else {
            *self
        }
    }

    pub fn exp(omega: &Vector3<f64>) -> Result<Self, ManifoldError> {
        let theta2 = omega.norm_squared();
        let theta = theta2.sqrt();
        if theta >= std::f64::consts::PI - PI_MARGIN {
            return Err(ManifoldError::Domain { angle: theta });
        }
        let (c, s) = if theta < SMALL_ANGLE {
            (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
        } else {
            ((0.5 * theta).cos(), (0.5 * theta).sin() / theta)
        };
        Ok(Self { w: c, v: omega * s }.normalized())
    }

    /// Exponential without the chart-domain check, for integrating rotations.
    pub fn from_rotvec(omega: &Vector3<f64>) -> Self {
        let theta2 = omega.norm_squared();
        let theta = theta2.sqrt();
        let (c, s) = if theta < SMALL_ANGLE {
            (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
        } else {
            ((0.5 * theta).cos(), (0.5 * theta).sin() / theta)
        };
        Self { w: c, v: omega * s }.normalized()
    }

    /// Rotation vector of the canonical representative.
    pub fn log(&self) -> Result<Vector3<f64>, ManifoldError> {
        let q = self.canonical();
        let n = q.v.norm();
        let theta = 2.0 * n.atan2(q.w);
        if theta >= std::f64::consts::PI - PI_MARGIN {
            return Err(ManifoldError::Domain { angle: theta });
        }
        let factor = if n < SMALL_ANGLE {
            // atan(x)/x ≈ 1 - x²/3 with x = n / w
            2.0 / q.w * (1.0 - n * n / (3.0 * q.w * q.w))
        } else {
            theta / n
        };
        Ok(q.v * factor)
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let (w, v) = (self.w, self.v);
        Matrix3::identity() * (w * w - v.norm_squared())
            + v * v.transpose() * 2.0
            + super::hat(&v) * (2.0 * w)
    }

    /// Shepperd's method; the input is assumed orthonormal.
    pub fn from_rotation_matrix(r: &Matrix3<f64>) -> Self {
        let tr = r.trace();
        let q = if tr > r[(0, 0)] && tr > r[(1, 1)] && tr > r[(2, 2)] {
            let s = 2.0 * (1.0 + tr).sqrt();
            Self {
                w: 0.25 * s,
                v: Vector3::new(
                    (r[(2, 1)] - r[(1, 2)]) / s,
                    (r[(0, 2)] - r[(2, 0)]) / s,
                    (r[(1, 0)] - r[(0, 1)]) / s,
                ),
            }
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = 2.0 * (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt();
            Self {
                w: (r[(2, 1)] - r[(1, 2)]) / s,
                v: Vector3::new(
                    0.25 * s,
                    (r[(0, 1)] + r[(1, 0)]) / s,
                    (r[(0, 2)] + r[(2, 0)]) / s,
                ),
            }
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = 2.0 * (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt();
            Self {
                w: (r[(0, 2)] - r[(2, 0)]) / s,
                v: Vector3::new(
                    (r[(0, 1)] + r[(1, 0)]) / s,
                    0.25 * s,
                    (r[(1, 2)] + r[(2, 1)]) / s,
                ),
            }
        } else {
            let s = 2.0 * (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt();
            Self {
                w: (r[(1, 0)] - r[(0, 1)]) / s,
                v: Vector3::new(
                    (r[(0, 2)] + r[(2, 0)]) / s,
                    (r[(1, 2)] + r[(2, 1)]) / s,
                    0.25 * s,
                ),
            }
        };
        q.canonical().normalized()
    }

    pub fn rotate(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let t = self.v.cross(p) * 2.0;
        p + t * self.w + self.v.cross(&t)
    }

    /// Yaw rotation about +z.
    pub fn from_yaw(theta: f64) -> Self {
        Self { w: (0.5 * theta).cos(), v: Vector3::new(0.0, 0.0, (0.5 * theta).sin()) }
    }

    /// `q ⊞ ω`.
    pub fn boxplus(&self, omega: &Vector3<f64>) -> Result<Self, ManifoldError> {
        Ok(*self * Self::exp(omega)?)
    }

    /// `self ⊟ other`.
    pub fn boxminus(&self, other: &Self) -> Result<Vector3<f64>, ManifoldError> {
        (other.inverse() * *self).log()
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, rhs: Self) -> Self {
        Self {
            w: self.w * rhs.w - self.v.dot(&rhs.v),
            v: rhs.v * self.w + self.v * rhs.w + self.v.cross(&rhs.v),
        }
        .normalized()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn exp_of_quarter_turn_about_z() {
        let q = UnitQuaternion::exp(&Vector3::new(0.0, 0.0, FRAC_PI_2)).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c = q.coords();
        assert!((c[0] - h).abs() < 1e-15 && c[1].abs() < 1e-15 && (c[3] - h).abs() < 1e-15);
    }

    #[test]
    fn exp_rejects_boundary_of_pi_ball() {
        let err = UnitQuaternion::exp(&Vector3::new(std::f64::consts::PI, 0.0, 0.0));
        assert!(matches!(err, Err(ManifoldError::Domain { .. })));
    }

    #[test]
    fn log_canonicalizes_sign() {
        let q = UnitQuaternion::exp(&Vector3::new(0.1, 0.2, -0.3)).unwrap();
        let neg = UnitQuaternion { w: -q.w, v: -q.v };
        assert!((neg.log().unwrap() - q.log().unwrap()).norm() < 1e-15);
    }

    #[test]
    fn tiny_angle_round_trip_uses_series() {
        let w = Vector3::new(1e-9, -2e-9, 3e-10);
        let back = UnitQuaternion::exp(&w).unwrap().log().unwrap();
        assert!((back - w).norm() < 1e-22);
    }

    #[test]
    fn matrix_conversion_round_trip() {
        for w in [Vector3::new(0.3, -2.0, 1.1), Vector3::new(3.0, 0.0, 0.1), Vector3::new(0.0, 0.0, 3.1)] {
            let q = UnitQuaternion::exp(&w).unwrap();
            let back = UnitQuaternion::from_rotation_matrix(&q.to_rotation_matrix());
            assert!((back.canonical().log().unwrap() - q.log().unwrap()).norm() < 1e-12);
            let p = Vector3::new(0.5, 1.0, -2.0);
            assert!((q.rotate(&p) - q.to_rotation_matrix() * p).norm() < 1e-14);
        }
    }
}
