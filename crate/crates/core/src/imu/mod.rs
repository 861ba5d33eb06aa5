//! Inertial kinematics: nominal integration, error-state discretization and
//! preintegration between camera frames.
//!
//! State `(q_WS, v, b_g, b_a, r)` with tangent order `(δθ, δv, δb_g, δb_a, δr)`.
//! Continuous model: `q̇ = q ⋆ ½[0; ω̃ − b_g]`, `v̇ = R(q)(ã − b_a) + g_W`,
//! `ṙ = v`, biases as random walks. Samples are held constant over their
//! interval; within it the rotation is integrated exactly and the Euclidean
//! parts with RK4.

mod preintegration;

pub use preintegration::{preintegrate, Preintegrated};

use nalgebra::{DMatrix, Matrix3, Vector3};
use thiserror::Error;

use crate::factors::models::StepDynamics;
use crate::factors::FactorError;
use crate::manifold::{exp_rotvec, hat, jacobian_right, ManifoldPoint, UnitQuaternion};

pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImuError {
    #[error("no IMU samples")]
    Empty,
    #[error("IMU timestamps decrease at sample {index}")]
    NonMonotone { index: usize },
    #[error("interval end {t_end} precedes the first sample at {first}")]
    EndBeforeStart { first: f64, t_end: f64 },
}

impl From<ImuError> for FactorError {
    fn from(e: ImuError) -> Self {
        FactorError::Model(e.to_string())
    }
}

/// Rejects empty or time-reversed sample streams.
pub fn check_samples(samples: &[ImuSample], t_end: f64) -> Result<(), ImuError> {
    let first = samples.first().ok_or(ImuError::Empty)?.t;
    if let Some(index) = samples.windows(2).position(|w| !(w[1].t >= w[0].t)) {
        return Err(ImuError::NonMonotone { index: index + 1 });
    }
    if t_end < first {
        return Err(ImuError::EndBeforeStart { first, t_end });
    }
    Ok(())
}

/// One gyroscope/accelerometer reading, valid from `t` until the next sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

/// Continuous-time noise densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoise {
    /// rad/s/√Hz
    pub gyro: f64,
    /// m/s²/√Hz
    pub accel: f64,
    /// rad/s²/√Hz
    pub gyro_bias: f64,
    /// m/s³/√Hz
    pub accel_bias: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self { gyro: 1.7e-4, accel: 2.0e-3, gyro_bias: 1.9e-5, accel_bias: 3.0e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuState {
    pub q: UnitQuaternion,
    pub v: Vector3<f64>,
    pub bg: Vector3<f64>,
    pub ba: Vector3<f64>,
    pub r: Vector3<f64>,
}

impl ImuState {
    pub fn to_point(&self) -> ManifoldPoint {
        ManifoldPoint::Product(vec![
            ManifoldPoint::Quaternion(self.q),
            ManifoldPoint::euclidean(self.v.as_slice()),
            ManifoldPoint::euclidean(self.bg.as_slice()),
            ManifoldPoint::euclidean(self.ba.as_slice()),
            ManifoldPoint::euclidean(self.r.as_slice()),
        ])
    }

    pub fn from_point(p: &ManifoldPoint) -> Result<Self, FactorError> {
        let e = |i: usize| -> Result<Vector3<f64>, FactorError> {
            match p.component(i) {
                Some(ManifoldPoint::Euclidean(v)) if v.len() == 3 => Ok(Vector3::new(v[0], v[1], v[2])),
                _ => Err(FactorError::Model("IMU state must be (q, v, b_g, b_a, r)".into())),
            }
        };
        let q = p
            .component(0)
            .and_then(ManifoldPoint::as_quaternion)
            .ok_or_else(|| FactorError::Model("IMU state must be (q, v, b_g, b_a, r)".into()))?;
        Ok(Self { q: *q, v: e(1)?, bg: e(2)?, ba: e(3)?, r: e(4)? })
    }
}

/// Rotation, velocity and position after holding body rate `w` and specific
/// force `a` (both bias-corrected) for `h` seconds.
pub(crate) fn integrate_step(
    rot: &Matrix3<f64>,
    v: &Vector3<f64>,
    p: &Vector3<f64>,
    w: &Vector3<f64>,
    a: &Vector3<f64>,
    h: f64,
    gravity: &Vector3<f64>,
) -> (Matrix3<f64>, Vector3<f64>, Vector3<f64>) {
    let r_mid = rot * exp_rotvec(&(w * (0.5 * h)));
    let r_end = rot * exp_rotvec(&(w * h));
    let k1v = rot * a + gravity;
    let k2v = r_mid * a + gravity;
    let k4v = r_end * a + gravity;
    let k1p = *v;
    let k2p = v + k1v * (0.5 * h);
    let k3p = v + k2v * (0.5 * h);
    let k4p = v + k2v * h;
    let v1 = v + (k1v + k2v * 4.0 + k4v) * (h / 6.0);
    let p1 = p + (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0);
    (r_end, v1, p1)
}

/// Interval over which sample `k` is held, clipped to `t_end`.
pub(crate) fn hold_interval(samples: &[ImuSample], k: usize, t_end: f64) -> f64 {
    let next = samples.get(k + 1).map_or(t_end, |s| s.t.min(t_end));
    (next - samples[k].t).max(0.0)
}

/// Nominal integration of `state` through `samples` up to `t_end`, splitting
/// every sample interval into `substeps` pieces.
pub fn integrate(state: &ImuState, samples: &[ImuSample], t_end: f64, gravity: &Vector3<f64>, substeps: usize) -> ImuState {
    let mut q = state.q;
    let mut v = state.v;
    let mut p = state.r;
    let n = substeps.max(1);
    for k in 0..samples.len() {
        let h = hold_interval(samples, k, t_end) / n as f64;
        if h == 0.0 {
            continue;
        }
        let w = samples[k].gyro - state.bg;
        let a = samples[k].accel - state.ba;
        for _ in 0..n {
            let (_, v1, p1) = integrate_step(&q.to_rotation_matrix(), &v, &p, &w, &a, h, gravity);
            q = q * UnitQuaternion::from_rotvec(&(w * h));
            v = v1;
            p = p1;
        }
    }
    ImuState { q, v, bg: state.bg, ba: state.ba, r: p }
}

/// Exact derivative of [`integrate`] with one substep, in the tangent order of
/// the state. Unlike `Φ` it differentiates the integrator itself rather than
/// the continuous model.
pub fn integration_jacobian(state: &ImuState, samples: &[ImuSample], t_end: f64) -> DMatrix<f64> {
    let mut rot = state.q.to_rotation_matrix();
    let mut jac = DMatrix::identity(15, 15);
    for k in 0..samples.len() {
        let h = hold_interval(samples, k, t_end);
        if h == 0.0 {
            continue;
        }
        let w = samples[k].gyro - state.bg;
        let a = samples[k].accel - state.ba;
        let mut step = DMatrix::identity(15, 15);
        let e_end = exp_rotvec(&(w * h));
        step.view_mut((0, 0), (3, 3)).copy_from(&e_end.transpose());
        step.view_mut((0, 6), (3, 3)).copy_from(&(-jacobian_right(&(w * h)) * h));
        // Partials of `rot·Exp(w s)·a` at s = 0, h/2, h, with RK4 weights for v and r.
        let weights_v = [h / 6.0, 4.0 * h / 6.0, h / 6.0];
        let weights_r = [h * h / 6.0, 2.0 * h * h / 6.0, 0.0];
        for (i, s) in [0.0, 0.5 * h, h].into_iter().enumerate() {
            let e = exp_rotvec(&(w * s));
            let r_s = rot * e;
            let d_theta = -rot * hat(&(e * a));
            let d_bg = r_s * hat(&a) * jacobian_right(&(w * s)) * s;
            let d_ba = -r_s;
            for (row, wt) in [(3, weights_v[i]), (12, weights_r[i])] {
                let mut v = step.view_mut((row, 0), (3, 3));
                v += d_theta * wt;
                let mut v = step.view_mut((row, 6), (3, 3));
                v += d_bg * wt;
                let mut v = step.view_mut((row, 9), (3, 3));
                v += d_ba * wt;
            }
        }
        step.view_mut((12, 3), (3, 3)).copy_from(&(Matrix3::identity() * h));
        jac = step * jac;
        rot *= e_end;
    }
    jac
}

/// Error-state system matrix `A` and noise input `B` for one held sample.
fn error_state_matrices(rot: &Matrix3<f64>, w: &Vector3<f64>, a: &Vector3<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut fa = DMatrix::zeros(15, 15);
    fa.view_mut((0, 0), (3, 3)).copy_from(&(-hat(w)));
    fa.view_mut((0, 6), (3, 3)).copy_from(&(-Matrix3::identity()));
    fa.view_mut((3, 0), (3, 3)).copy_from(&(-rot * hat(a)));
    fa.view_mut((3, 9), (3, 3)).copy_from(&(-rot));
    fa.view_mut((12, 3), (3, 3)).copy_from(&Matrix3::identity());
    let mut fb = DMatrix::zeros(15, 12);
    fb.view_mut((0, 0), (3, 3)).copy_from(&(-Matrix3::identity()));
    fb.view_mut((3, 3), (3, 3)).copy_from(&(-rot));
    fb.view_mut((6, 6), (3, 3)).copy_from(&Matrix3::identity());
    fb.view_mut((9, 9), (3, 3)).copy_from(&Matrix3::identity());
    (fa, fb)
}

fn noise_spectral(noise: &ImuNoise) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(12, 12);
    for i in 0..3 {
        k[(i, i)] = noise.gyro * noise.gyro;
        k[(3 + i, 3 + i)] = noise.accel * noise.accel;
        k[(6 + i, 6 + i)] = noise.gyro_bias * noise.gyro_bias;
        k[(9 + i, 9 + i)] = noise.accel_bias * noise.accel_bias;
    }
    k
}

/// `Π_k exp(A_k h_k)`, later factors on the left.
pub fn transition_matrix(systems: &[(DMatrix<f64>, f64)]) -> DMatrix<f64> {
    let n = systems.first().map_or(0, |s| s.0.nrows());
    let mut phi = DMatrix::identity(n, n);
    for (a, h) in systems {
        phi = (a * *h).exp() * phi;
    }
    phi
}

/// Linearized transition of one frame interval.
#[derive(Debug, Clone)]
pub struct DiscreteTransition {
    pub nominal: ImuState,
    /// `Φ` with `x(t1) ⊟ x̂(t1) ≈ Φ (x(t0) ⊟ x̂(t0))`.
    pub phi: DMatrix<f64>,
    /// `Σ_w`, the accumulated process noise.
    pub noise: DMatrix<f64>,
}

/// Nominal trajectory, `Φ` and `Σ_w` about `x̂(t0) = state`. Per held sample
/// `Φ_k = exp(A_k h_k)` and `Σ ← Φ_k Σ Φ_kᵀ + B K Bᵀ h_k`.
pub fn discretize(
    state: &ImuState,
    samples: &[ImuSample],
    t_end: f64,
    noise: &ImuNoise,
    gravity: &Vector3<f64>,
) -> Result<DiscreteTransition, ImuError> {
    check_samples(samples, t_end)?;
    let k = noise_spectral(noise);
    let mut rot = state.q.to_rotation_matrix();
    let mut v = state.v;
    let mut p = state.r;
    let mut phi = DMatrix::identity(15, 15);
    let mut cov = DMatrix::zeros(15, 15);
    for i in 0..samples.len() {
        let h = hold_interval(samples, i, t_end);
        if h == 0.0 {
            continue;
        }
        let w = samples[i].gyro - state.bg;
        let a = samples[i].accel - state.ba;
        let (fa, fb) = error_state_matrices(&rot, &w, &a);
        let step = (fa * h).exp();
        let q = &fb * &k * fb.transpose() * h;
        cov = &step * cov * step.transpose() + q;
        phi = &step * phi;
        let (r1, v1, p1) = integrate_step(&rot, &v, &p, &w, &a, h, gravity);
        rot = r1;
        v = v1;
        p = p1;
    }
    let nominal = integrate(state, samples, t_end, gravity, 1);
    Ok(DiscreteTransition { nominal, phi, noise: (&cov + cov.transpose()) * 0.5 })
}

/// Ideal gyroscope and accelerometer readings for a body with rotation `rot`,
/// body rate `omega` and world acceleration `accel_world`, before noise.
pub fn ideal_reading(
    rot: &Matrix3<f64>,
    omega: &Vector3<f64>,
    accel_world: &Vector3<f64>,
    bg: &Vector3<f64>,
    ba: &Vector3<f64>,
    gravity: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    (omega + bg, rot.transpose() * (accel_world - gravity) + ba)
}

/// One frame interval of IMU dynamics as a [`StepDynamics`]. `Σ_w` is fixed
/// at construction; `G` is the [`integration_jacobian`] about the queried
/// state, so it agrees with `propagate` to first order.
#[derive(Debug, Clone)]
pub struct ImuStep {
    pub samples: Vec<ImuSample>,
    pub t_end: f64,
    pub noise: ImuNoise,
    pub gravity: Vector3<f64>,
    process_noise: DMatrix<f64>,
}

impl ImuStep {
    pub fn new(samples: Vec<ImuSample>, t_end: f64, noise: ImuNoise, gravity: Vector3<f64>, at: &ImuState) -> Result<Self, ImuError> {
        let process_noise = discretize(at, &samples, t_end, &noise, &gravity)?.noise;
        Ok(Self { samples, t_end, noise, gravity, process_noise })
    }
}

impl StepDynamics for ImuStep {
    fn propagate(&self, x: &ManifoldPoint) -> Result<ManifoldPoint, FactorError> {
        let s = ImuState::from_point(x)?;
        Ok(integrate(&s, &self.samples, self.t_end, &self.gravity, 1).to_point())
    }

    fn jacobian(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>, FactorError> {
        let s = ImuState::from_point(x)?;
        check_samples(&self.samples, self.t_end)?;
        Ok(integration_jacobian(&s, &self.samples, self.t_end))
    }

    fn noise_covariance(&self) -> &DMatrix<f64> {
        &self.process_noise
    }
}
