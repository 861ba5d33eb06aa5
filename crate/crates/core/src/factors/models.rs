//! Measurement, dynamics and pose-extraction models used by the residuals.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix3, Matrix3x6, Vector2, Vector3};

use super::FactorError;
use crate::manifold::{hat, ManifoldPoint, UnitQuaternion};

/// Measurement function `h(pose, feature)`.
pub trait MeasurementModel: Send + Sync + fmt::Debug {
    fn measurement_dim(&self) -> usize;

    fn feature_dim(&self) -> usize;

    fn predict(&self, pose: &ManifoldPoint, feature: &DVector<f64>) -> Result<DVector<f64>, FactorError>;

    /// `(∂h/∂pose, ∂h/∂feature)`.
    fn jacobians(
        &self,
        pose: &ManifoldPoint,
        feature: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), FactorError>;

    /// Feature implied by a single measurement, `ℓ(pose, z)`, when the model
    /// is invertible.
    fn inverse(&self, _pose: &ManifoldPoint, _z: &DVector<f64>) -> Option<Result<DVector<f64>, FactorError>> {
        None
    }

    /// `(∂ℓ/∂pose, ∂ℓ/∂z)`.
    fn inverse_jacobians(
        &self,
        _pose: &ManifoldPoint,
        _z: &DVector<f64>,
    ) -> Option<Result<(DMatrix<f64>, DMatrix<f64>), FactorError>> {
        None
    }

    fn noise_covariance(&self) -> DMatrix<f64>;
}

/// One discrete step `x_{t+1} = g(x_t) + w_t` with `w_t ~ N(0, Σ_w)`.
pub trait StepDynamics: Send + Sync + fmt::Debug {
    fn propagate(&self, x: &ManifoldPoint) -> Result<ManifoldPoint, FactorError>;

    /// `G` with `g(x ⊞ δ) ≈ g(x) ⊞ G δ`.
    fn jacobian(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>, FactorError>;

    fn noise_covariance(&self) -> &DMatrix<f64>;
}

/// Map from a process state to the pose the sensor observes from, `ψ`.
pub trait PoseMap: Send + Sync + fmt::Debug {
    fn pose(&self, x: &ManifoldPoint) -> Result<ManifoldPoint, FactorError>;

    fn jacobian(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>, FactorError>;
}

fn model_err(msg: &str) -> FactorError {
    FactorError::Model(msg.to_string())
}

fn planar_pose(pose: &ManifoldPoint) -> Result<(Vector2<f64>, f64), FactorError> {
    match pose.as_euclidean() {
        Some(v) if v.len() == 3 => Ok((Vector2::new(v[0], v[1]), v[2])),
        _ => Err(model_err("planar pose must be Euclidean (x, y, theta)")),
    }
}

fn spatial_pose(pose: &ManifoldPoint) -> Result<(UnitQuaternion, Vector3<f64>), FactorError> {
    match (pose.component(0), pose.component(1)) {
        (Some(ManifoldPoint::Quaternion(q)), Some(ManifoldPoint::Euclidean(r))) if r.len() == 3 => {
            Ok((*q, Vector3::new(r[0], r[1], r[2])))
        }
        _ => Err(model_err("pose must be (quaternion, position)")),
    }
}

pub fn spatial_pose_point(q: UnitQuaternion, r: Vector3<f64>) -> ManifoldPoint {
    ManifoldPoint::Product(vec![ManifoldPoint::Quaternion(q), ManifoldPoint::euclidean(r.as_slice())])
}

fn vec2(f: &DVector<f64>) -> Result<Vector2<f64>, FactorError> {
    if f.len() == 2 {
        Ok(Vector2::new(f[0], f[1]))
    } else {
        Err(FactorError::Dimension { what: "planar feature", expected: 2, got: f.len() })
    }
}

fn vec3(f: &DVector<f64>) -> Result<Vector3<f64>, FactorError> {
    if f.len() == 3 {
        Ok(Vector3::new(f[0], f[1], f[2]))
    } else {
        Err(FactorError::Dimension { what: "spatial feature", expected: 3, got: f.len() })
    }
}

fn dyn_of<R: nalgebra::Dim, C: nalgebra::Dim, S>(m: &nalgebra::Matrix<f64, R, C, S>) -> DMatrix<f64>
where
    S: nalgebra::RawStorage<f64, R, C>,
{
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Planar landmark seen as an offset in the world frame: `h = f − p`.
#[derive(Debug, Clone)]
pub struct PlanarTranslation {
    pub noise: Matrix2<f64>,
}

impl PlanarTranslation {
    pub fn isotropic(sigma: f64) -> Self {
        Self { noise: Matrix2::identity() * sigma * sigma }
    }
}

impl MeasurementModel for PlanarTranslation {
    fn measurement_dim(&self) -> usize {
        2
    }

    fn feature_dim(&self) -> usize {
        2
    }

    fn predict(&self, pose: &ManifoldPoint, feature: &DVector<f64>) -> Result<DVector<f64>, FactorError> {
        let (p, _) = planar_pose(pose)?;
        let d = vec2(feature)? - p;
        Ok(DVector::from_column_slice(d.as_slice()))
    }

    fn jacobians(&self, pose: &ManifoldPoint, feature: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), FactorError> {
        planar_pose(pose)?;
        vec2(feature)?;
        let hp = DMatrix::from_row_slice(2, 3, &[-1.0, 0.0, 0.0, 0.0, -1.0, 0.0]);
        Ok((hp, DMatrix::identity(2, 2)))
    }

    fn inverse(&self, pose: &ManifoldPoint, z: &DVector<f64>) -> Option<Result<DVector<f64>, FactorError>> {
        Some(planar_pose(pose).and_then(|(p, _)| {
            let f = p + vec2(z)?;
            Ok(DVector::from_column_slice(f.as_slice()))
        }))
    }

    fn inverse_jacobians(&self, _pose: &ManifoldPoint, _z: &DVector<f64>) -> Option<Result<(DMatrix<f64>, DMatrix<f64>), FactorError>> {
        let lx = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        Some(Ok((lx, DMatrix::identity(2, 2))))
    }

    fn noise_covariance(&self) -> DMatrix<f64> {
        dyn_of(&self.noise)
    }
}

/// Planar landmark seen in the robot frame: `h = R(θ)ᵀ (f − p)`.
#[derive(Debug, Clone)]
pub struct PlanarBody {
    pub noise: Matrix2<f64>,
}

impl PlanarBody {
    pub fn isotropic(sigma: f64) -> Self {
        Self { noise: Matrix2::identity() * sigma * sigma }
    }
}

fn rot2(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

fn drot2(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(-s, -c, c, -s)
}

impl MeasurementModel for PlanarBody {
    fn measurement_dim(&self) -> usize {
        2
    }

    fn feature_dim(&self) -> usize {
        2
    }

    fn predict(&self, pose: &ManifoldPoint, feature: &DVector<f64>) -> Result<DVector<f64>, FactorError> {
        let (p, th) = planar_pose(pose)?;
        let z = rot2(th).transpose() * (vec2(feature)? - p);
        Ok(DVector::from_column_slice(z.as_slice()))
    }

    fn jacobians(&self, pose: &ManifoldPoint, feature: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), FactorError> {
        let (p, th) = planar_pose(pose)?;
        let d = vec2(feature)? - p;
        let rt = rot2(th).transpose();
        let dth = drot2(th).transpose() * d;
        let mut hp = DMatrix::zeros(2, 3);
        hp.view_mut((0, 0), (2, 2)).copy_from(&(-rt));
        hp[(0, 2)] = dth.x;
        hp[(1, 2)] = dth.y;
        Ok((hp, dyn_of(&rt)))
    }

    fn inverse(&self, pose: &ManifoldPoint, z: &DVector<f64>) -> Option<Result<DVector<f64>, FactorError>> {
        Some(planar_pose(pose).and_then(|(p, th)| {
            let f = p + rot2(th) * vec2(z)?;
            Ok(DVector::from_column_slice(f.as_slice()))
        }))
    }

    fn inverse_jacobians(&self, pose: &ManifoldPoint, z: &DVector<f64>) -> Option<Result<(DMatrix<f64>, DMatrix<f64>), FactorError>> {
        Some(planar_pose(pose).and_then(|(_, th)| {
            let dz = drot2(th) * vec2(z)?;
            let lx = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, dz.x, 0.0, 1.0, dz.y]);
            Ok((lx, dyn_of(&rot2(th))))
        }))
    }

    fn noise_covariance(&self) -> DMatrix<f64> {
        dyn_of(&self.noise)
    }
}

/// Camera-frame point `p_C = Rᵀ (f − r)` and its Jacobian with respect to the
/// pose tangent `(δθ, δr)` and the feature.
fn camera_point(
    pose: &ManifoldPoint,
    feature: &DVector<f64>,
) -> Result<(Vector3<f64>, Matrix3x6<f64>, Matrix3<f64>), FactorError> {
    let (q, r) = spatial_pose(pose)?;
    let rt = q.to_rotation_matrix().transpose();
    let pc = rt * (vec3(feature)? - r);
    let mut jp = Matrix3x6::zeros();
    jp.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&pc));
    jp.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-rt));
    Ok((pc, jp, rt))
}

const MIN_DEPTH: f64 = 1e-9;

/// Normalized pinhole projection `h = (p_x/p_z, p_y/p_z)` of the camera-frame point.
#[derive(Debug, Clone)]
pub struct PinholeNormalized {
    pub noise: Matrix2<f64>,
}

impl PinholeNormalized {
    pub fn isotropic(sigma: f64) -> Self {
        Self { noise: Matrix2::identity() * sigma * sigma }
    }
}

impl MeasurementModel for PinholeNormalized {
    fn measurement_dim(&self) -> usize {
        2
    }

    fn feature_dim(&self) -> usize {
        3
    }

    fn predict(&self, pose: &ManifoldPoint, feature: &DVector<f64>) -> Result<DVector<f64>, FactorError> {
        let (pc, _, _) = camera_point(pose, feature)?;
        if pc.z <= MIN_DEPTH {
            return Err(model_err("feature behind camera"));
        }
        Ok(DVector::from_column_slice(&[pc.x / pc.z, pc.y / pc.z]))
    }

    fn jacobians(&self, pose: &ManifoldPoint, feature: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), FactorError> {
        let (pc, jp, rt) = camera_point(pose, feature)?;
        if pc.z <= MIN_DEPTH {
            return Err(model_err("feature behind camera"));
        }
        let iz = 1.0 / pc.z;
        let dpi = Matrix2x3::new(iz, 0.0, -pc.x * iz * iz, 0.0, iz, -pc.y * iz * iz);
        Ok((dyn_of(&(dpi * jp)), dyn_of(&(dpi * rt))))
    }

    fn noise_covariance(&self) -> DMatrix<f64> {
        dyn_of(&self.noise)
    }
}

/// Rectified stereo pair: `z = (u_L, u_R, v)` in pixels, right camera offset
/// by `baseline` along the left camera's x axis.
#[derive(Debug, Clone)]
pub struct StereoPinhole {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
    pub sigma_px: f64,
}

impl StereoPinhole {
    pub fn project_camera(&self, pc: &Vector3<f64>) -> Result<Vector3<f64>, FactorError> {
        if pc.z <= MIN_DEPTH {
            return Err(model_err("feature behind camera"));
        }
        Ok(Vector3::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fx * (pc.x - self.baseline) / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ))
    }

    /// Camera-frame point from one stereo measurement.
    pub fn back_project(&self, z: &Vector3<f64>) -> Result<Vector3<f64>, FactorError> {
        let disparity = z.x - z.y;
        if disparity <= 0.0 {
            return Err(model_err("non-positive stereo disparity"));
        }
        let depth = self.fx * self.baseline / disparity;
        Ok(Vector3::new((z.x - self.cx) * depth / self.fx, (z.z - self.cy) * depth / self.fy, depth))
    }
}

impl MeasurementModel for StereoPinhole {
    fn measurement_dim(&self) -> usize {
        3
    }

    fn feature_dim(&self) -> usize {
        3
    }

    fn predict(&self, pose: &ManifoldPoint, feature: &DVector<f64>) -> Result<DVector<f64>, FactorError> {
        let (pc, _, _) = camera_point(pose, feature)?;
        let z = self.project_camera(&pc)?;
        Ok(DVector::from_column_slice(z.as_slice()))
    }

    fn jacobians(&self, pose: &ManifoldPoint, feature: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), FactorError> {
        let (pc, jp, rt) = camera_point(pose, feature)?;
        if pc.z <= MIN_DEPTH {
            return Err(model_err("feature behind camera"));
        }
        let iz = 1.0 / pc.z;
        let iz2 = iz * iz;
        let dpi = Matrix3::new(
            self.fx * iz,
            0.0,
            -self.fx * pc.x * iz2,
            self.fx * iz,
            0.0,
            -self.fx * (pc.x - self.baseline) * iz2,
            0.0,
            self.fy * iz,
            -self.fy * pc.y * iz2,
        );
        Ok((dyn_of(&(dpi * jp)), dyn_of(&(dpi * rt))))
    }

    fn inverse(&self, pose: &ManifoldPoint, z: &DVector<f64>) -> Option<Result<DVector<f64>, FactorError>> {
        let run = || {
            let (q, r) = spatial_pose(pose)?;
            let pc = self.back_project(&vec3(z)?)?;
            let f = q.rotate(&pc) + r;
            Ok(DVector::from_column_slice(f.as_slice()))
        };
        Some(run())
    }

    fn noise_covariance(&self) -> DMatrix<f64> {
        DMatrix::identity(3, 3) * self.sigma_px * self.sigma_px
    }
}

/// `ψ(x) = x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPose;

impl PoseMap for IdentityPose {
    fn pose(&self, x: &ManifoldPoint) -> Result<ManifoldPoint, FactorError> {
        Ok(x.clone())
    }

    fn jacobian(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>, FactorError> {
        let d = x.tangent_dim();
        Ok(DMatrix::identity(d, d))
    }
}

/// Camera pose of an IMU state `(q_WI, v, b_g, b_a, r_WI)` given the
/// camera-to-IMU extrinsics: `q_WC = q_WI ⋆ q_IC`, `r_WC = r_WI + R(q_WI) r_IC`.
#[derive(Debug, Clone, Copy)]
pub struct ImuCameraPose {
    pub q_ic: UnitQuaternion,
    pub r_ic: Vector3<f64>,
}

impl Default for ImuCameraPose {
    fn default() -> Self {
        Self { q_ic: UnitQuaternion::identity(), r_ic: Vector3::zeros() }
    }
}

fn imu_parts(x: &ManifoldPoint) -> Result<(UnitQuaternion, Vector3<f64>), FactorError> {
    match (x.component(0), x.component(4)) {
        (Some(ManifoldPoint::Quaternion(q)), Some(ManifoldPoint::Euclidean(r))) if r.len() == 3 => {
            Ok((*q, Vector3::new(r[0], r[1], r[2])))
        }
        _ => Err(model_err("IMU state must be (q, v, b_g, b_a, r)")),
    }
}

impl PoseMap for ImuCameraPose {
    fn pose(&self, x: &ManifoldPoint) -> Result<ManifoldPoint, FactorError> {
        let (q, r) = imu_parts(x)?;
        Ok(spatial_pose_point(q * self.q_ic, r + q.rotate(&self.r_ic)))
    }

    fn jacobian(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>, FactorError> {
        let (q, _) = imu_parts(x)?;
        let mut j = DMatrix::zeros(6, 15);
        j.view_mut((0, 0), (3, 3)).copy_from(&self.q_ic.to_rotation_matrix().transpose());
        j.view_mut((3, 0), (3, 3)).copy_from(&(-q.to_rotation_matrix() * hat(&self.r_ic)));
        j.view_mut((3, 12), (3, 3)).copy_from(&Matrix3::identity());
        Ok(j)
    }
}

/// Unicycle `ẋ¹ = v cos θ, ẋ² = v sin θ, θ̇ = ω` integrated exactly over `dt`
/// with constant inputs.
#[derive(Debug, Clone)]
pub struct Unicycle {
    pub v: f64,
    pub omega: f64,
    pub dt: f64,
    pub noise: DMatrix<f64>,
}

impl Unicycle {
    /// `(sin(θ+φ) − sin θ)/φ` and `(cos θ − cos(θ+φ))/φ`.
    fn chord(theta: f64, phi: f64) -> (f64, f64) {
        if phi.abs() < 1e-6 {
            let (s, c) = theta.sin_cos();
            (c - 0.5 * phi * s, s + 0.5 * phi * c)
        } else {
            let (s0, c0) = theta.sin_cos();
            let (s1, c1) = (theta + phi).sin_cos();
            ((s1 - s0) / phi, (c0 - c1) / phi)
        }
    }

    pub fn step(&self, x: f64, y: f64, theta: f64) -> (f64, f64, f64) {
        let phi = self.omega * self.dt;
        let (a, b) = Self::chord(theta, phi);
        let l = self.v * self.dt;
        (x + l * a, y + l * b, theta + phi)
    }
}

impl StepDynamics for Unicycle {
    fn propagate(&self, x: &ManifoldPoint) -> Result<ManifoldPoint, FactorError> {
        let (p, th) = planar_pose(x)?;
        let (a, b, c) = self.step(p.x, p.y, th);
        Ok(ManifoldPoint::euclidean(&[a, b, c]))
    }

    fn jacobian(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>, FactorError> {
        let (_, th) = planar_pose(x)?;
        let phi = self.omega * self.dt;
        let l = self.v * self.dt;
        // d/dθ of the chord terms is the chord evaluated a quarter turn ahead.
        let (a, b) = Self::chord(th + std::f64::consts::FRAC_PI_2, phi);
        Ok(DMatrix::from_row_slice(3, 3, &[1.0, 0.0, l * a, 0.0, 1.0, l * b, 0.0, 0.0, 1.0]))
    }

    fn noise_covariance(&self) -> &DMatrix<f64> {
        &self.noise
    }
}

/// Pose moving with a constant body twist: `q' = q ⋆ Exp(ω dt)`,
/// `r' = r + R(q) v dt`.
#[derive(Debug, Clone)]
pub struct ConstantTwist {
    pub omega: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub dt: f64,
    pub noise: DMatrix<f64>,
}

impl StepDynamics for ConstantTwist {
    fn propagate(&self, x: &ManifoldPoint) -> Result<ManifoldPoint, FactorError> {
        let (q, r) = spatial_pose(x)?;
        let q1 = q.boxplus(&(self.omega * self.dt))?;
        Ok(spatial_pose_point(q1, r + q.rotate(&(self.velocity * self.dt))))
    }

    fn jacobian(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>, FactorError> {
        let (q, _) = spatial_pose(x)?;
        let step = UnitQuaternion::exp(&(self.omega * self.dt))?.to_rotation_matrix();
        let mut g = DMatrix::identity(6, 6);
        g.view_mut((0, 0), (3, 3)).copy_from(&step.transpose());
        g.view_mut((3, 0), (3, 3)).copy_from(&(-q.to_rotation_matrix() * hat(&(self.velocity * self.dt))));
        Ok(g)
    }

    fn noise_covariance(&self) -> &DMatrix<f64> {
        &self.noise
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_unicycle_ends_at_ten_metres() {
        let u = Unicycle { v: 1.0, omega: 0.0, dt: 0.1, noise: DMatrix::identity(3, 3) };
        let mut s = (0.0, 0.0, 0.0);
        for _ in 0..100 {
            s = u.step(s.0, s.1, s.2);
        }
        assert!((s.0 - 10.0).abs() < 1e-9 && s.1.abs() < 1e-9);
    }

    #[test]
    fn stereo_disparity_matches_depth() {
        let cam = StereoPinhole { fx: 400.0, fy: 400.0, cx: 320.0, cy: 240.0, baseline: 0.1, sigma_px: 0.05 };
        let pc = Vector3::new(0.3, -0.2, 5.0);
        let z = cam.project_camera(&pc).unwrap();
        assert!((z.x - z.y - 400.0 * 0.1 / 5.0).abs() < 1e-12);
        assert!((cam.back_project(&z).unwrap() - pc).norm() < 1e-12);
    }

    #[test]
    fn identity_extrinsics_give_the_imu_pose() {
        let q = UnitQuaternion::exp(&Vector3::new(0.1, 0.2, 0.3)).unwrap();
        let x = ManifoldPoint::Product(vec![
            ManifoldPoint::Quaternion(q),
            ManifoldPoint::euclidean(&[0.0; 3]),
            ManifoldPoint::euclidean(&[0.0; 3]),
            ManifoldPoint::euclidean(&[0.0; 3]),
            ManifoldPoint::euclidean(&[1.0, 2.0, 3.0]),
        ]);
        let p = ImuCameraPose::default().pose(&x).unwrap();
        assert_eq!(p, spatial_pose_point(q, Vector3::new(1.0, 2.0, 3.0)));
    }
}
