use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use super::{exp_rotvec, ManifoldError, UnitQuaternion, PI_MARGIN};

/// Element of SO(3) stored as a 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    m: Matrix3<f64>,
}

impl Rotation {
    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    /// Projects an arbitrary matrix onto SO(3).
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self { m: project(m) }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn transpose(&self) -> Self {
        Self { m: self.m.transpose() }
    }

    pub fn exp(omega: &Vector3<f64>) -> Result<Self, ManifoldError> {
        let theta = omega.norm();
        if theta >= std::f64::consts::PI - PI_MARGIN {
            return Err(ManifoldError::Domain { angle: theta });
        }
        Ok(Self { m: exp_rotvec(omega) })
    }

    /// Goes through the quaternion so the result stays well conditioned near π.
    pub fn log(&self) -> Result<Vector3<f64>, ManifoldError> {
        UnitQuaternion::from_rotation_matrix(&self.m).log()
    }

    pub fn to_quaternion(&self) -> UnitQuaternion {
        UnitQuaternion::from_rotation_matrix(&self.m)
    }

    pub fn boxplus(&self, omega: &Vector3<f64>) -> Result<Self, ManifoldError> {
        Ok(*self * Self::exp(omega)?)
    }

    pub fn boxminus(&self, other: &Self) -> Result<Vector3<f64>, ManifoldError> {
        (other.transpose() * *self).log()
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Self) -> Self {
        Self { m: project(&(self.m * rhs.m)) }
    }
}

fn project(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_turn_about_z() {
        let r = Rotation::identity().boxplus(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)).unwrap();
        let expect = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r.matrix() - expect).norm() < 1e-15);
    }

    #[test]
    fn composition_stays_orthonormal() {
        let step = Rotation::exp(&Vector3::new(0.01, 0.02, -0.015)).unwrap();
        let mut r = Rotation::identity();
        for _ in 0..10_000 {
            r = r * step;
        }
        let m = r.matrix();
        assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-13);
        assert!((m.determinant() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn log_near_pi_is_accurate() {
        let w = Vector3::new(0.0, 3.14159, 0.0);
        let back = Rotation::exp(&w).unwrap().log().unwrap();
        assert!((back - w).norm() < 1e-10);
    }
}
