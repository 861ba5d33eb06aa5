use nalgebra::{DMatrix, Matrix3, Vector3};

use super::{check_samples, hold_interval, integrate_step, ImuError, ImuNoise, ImuSample, ImuState};
use crate::manifold::{hat, UnitQuaternion};

/// Relative motion `(ΔR, Δv, Δp)` over an interval, expressed in the body
/// frame at its start and without gravity, plus its covariance over
/// `(δθ, δv, δp)`.
#[derive(Debug, Clone)]
pub struct Preintegrated {
    pub dt: f64,
    pub delta_q: UnitQuaternion,
    pub delta_v: Vector3<f64>,
    pub delta_p: Vector3<f64>,
    pub covariance: DMatrix<f64>,
    pub bg: Vector3<f64>,
    pub ba: Vector3<f64>,
}

/// Integrates `samples` up to `t_end` at fixed biases.
pub fn preintegrate(samples: &[ImuSample], t_end: f64, bg: &Vector3<f64>, ba: &Vector3<f64>, noise: &ImuNoise) -> Result<Preintegrated, ImuError> {
    check_samples(samples, t_end)?;
    let mut q = UnitQuaternion::identity();
    let mut v = Vector3::zeros();
    let mut p = Vector3::zeros();
    let mut cov = DMatrix::zeros(9, 9);
    let mut dt = 0.0;
    let (sg, sa) = (noise.gyro * noise.gyro, noise.accel * noise.accel);
    for k in 0..samples.len() {
        let h = hold_interval(samples, k, t_end);
        if h == 0.0 {
            continue;
        }
        let w = samples[k].gyro - bg;
        let a = samples[k].accel - ba;
        let rot = q.to_rotation_matrix();

        let mut fa = DMatrix::zeros(9, 9);
        fa.view_mut((0, 0), (3, 3)).copy_from(&(-hat(&w)));
        fa.view_mut((3, 0), (3, 3)).copy_from(&(-rot * hat(&a)));
        fa.view_mut((6, 3), (3, 3)).copy_from(&Matrix3::identity());
        let step = (fa * h).exp();
        let mut qn = DMatrix::zeros(9, 9);
        qn.view_mut((0, 0), (3, 3)).copy_from(&(Matrix3::identity() * (sg * h)));
        qn.view_mut((3, 3), (3, 3)).copy_from(&(Matrix3::identity() * (sa * h)));
        cov = &step * cov * step.transpose() + qn;

        let (_, v1, p1) = integrate_step(&rot, &v, &p, &w, &a, h, &Vector3::zeros());
        q = q * UnitQuaternion::from_rotvec(&(w * h));
        v = v1;
        p = p1;
        dt += h;
    }
    Ok(Preintegrated { dt, delta_q: q, delta_v: v, delta_p: p, covariance: (&cov + cov.transpose()) * 0.5, bg: *bg, ba: *ba })
}

impl Preintegrated {
    /// State at the end of the interval given the state at its start.
    pub fn predict(&self, s: &ImuState, gravity: &Vector3<f64>) -> ImuState {
        let rot = s.q.to_rotation_matrix();
        let t = self.dt;
        ImuState {
            q: s.q * self.delta_q,
            v: s.v + gravity * t + rot * self.delta_v,
            bg: s.bg,
            ba: s.ba,
            r: s.r + s.v * t + gravity * (0.5 * t * t) + rot * self.delta_p,
        }
    }

    /// Concatenation `[a, b] ∘ [b, c]`.
    pub fn compose(&self, next: &Preintegrated) -> Preintegrated {
        let r_ab = self.delta_q.to_rotation_matrix();
        let r_bc = next.delta_q.to_rotation_matrix();
        let mut f = DMatrix::identity(9, 9);
        f.view_mut((0, 0), (3, 3)).copy_from(&r_bc.transpose());
        f.view_mut((3, 0), (3, 3)).copy_from(&(-r_ab * hat(&next.delta_v)));
        f.view_mut((6, 0), (3, 3)).copy_from(&(-r_ab * hat(&next.delta_p)));
        f.view_mut((6, 3), (3, 3)).copy_from(&(Matrix3::identity() * next.dt));
        let mut g = DMatrix::zeros(9, 9);
        g.view_mut((0, 0), (3, 3)).copy_from(&Matrix3::identity());
        g.view_mut((3, 3), (3, 3)).copy_from(&r_ab);
        g.view_mut((6, 6), (3, 3)).copy_from(&r_ab);
        let cov = &f * &self.covariance * f.transpose() + &g * &next.covariance * g.transpose();
        Preintegrated {
            dt: self.dt + next.dt,
            delta_q: self.delta_q * next.delta_q,
            delta_v: self.delta_v + r_ab * next.delta_v,
            delta_p: self.delta_p + self.delta_v * next.dt + r_ab * next.delta_p,
            covariance: (&cov + cov.transpose()) * 0.5,
            bg: self.bg,
            ba: self.ba,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::{integrate, GRAVITY};

    fn wobble(n: usize, h: f64) -> Vec<ImuSample> {
        (0..n)
            .map(|k| {
                let t = k as f64 * h;
                ImuSample {
                    t,
                    gyro: Vector3::new(0.3 * t.sin(), 0.2, -0.4 * (2.0 * t).cos()),
                    accel: Vector3::new(0.5, -0.2 * t, 9.81 + 0.1 * t.cos()),
                }
            })
            .collect()
    }

    #[test]
    fn stationary_preintegration_is_identity() {
        let s: Vec<_> = (0..100).map(|k| ImuSample { t: k as f64 * 0.01, gyro: Vector3::zeros(), accel: Vector3::zeros() }).collect();
        let p = preintegrate(&s, 1.0, &Vector3::zeros(), &Vector3::zeros(), &ImuNoise::default()).unwrap();
        assert!(p.delta_q.log().unwrap().norm() < 1e-15 && p.delta_v.norm() < 1e-15 && p.delta_p.norm() < 1e-15);
    }

    #[test]
    fn prediction_matches_direct_integration() {
        let s = wobble(200, 0.005);
        let bg = Vector3::new(0.01, 0.0, -0.01);
        let ba = Vector3::new(0.0, 0.02, 0.0);
        let x0 = ImuState {
            q: UnitQuaternion::exp(&Vector3::new(0.2, -0.1, 1.0)).unwrap(),
            v: Vector3::new(1.0, -1.0, 0.2),
            bg,
            ba,
            r: Vector3::new(3.0, 1.0, -2.0),
        };
        let direct = integrate(&x0, &s, 1.0, &GRAVITY, 1);
        let pre = preintegrate(&s, 1.0, &bg, &ba, &ImuNoise::default()).unwrap().predict(&x0, &GRAVITY);
        assert!(pre.q.boxminus(&direct.q).unwrap().norm() < 1e-10);
        assert!((pre.v - direct.v).norm() < 1e-10);
        assert!((pre.r - direct.r).norm() < 1e-10);
    }

    #[test]
    fn split_intervals_compose() {
        let s = wobble(200, 0.005);
        let z = Vector3::zeros();
        let noise = ImuNoise::default();
        let whole = preintegrate(&s, 1.0, &z, &z, &noise).unwrap();
        let a = preintegrate(&s[..80], 0.4, &z, &z, &noise).unwrap();
        let b = preintegrate(&s[80..], 1.0, &z, &z, &noise).unwrap();
        let ab = a.compose(&b);
        assert!(ab.delta_q.boxminus(&whole.delta_q).unwrap().norm() < 1e-8);
        assert!((ab.delta_v - whole.delta_v).norm() < 1e-8);
        assert!((ab.delta_p - whole.delta_p).norm() < 1e-8);
        assert!((ab.covariance - &whole.covariance).norm() < 1e-3 * whole.covariance.norm());
    }
}
