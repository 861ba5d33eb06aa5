use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{check_positive, check_sigma, model_sigma, Dataset, SimConfig, SimError, Track};
use crate::estimators::{FrameInput, ImuInterval, Observation, Problem, SensorModel, Transition};
use crate::factors::models::{ImuCameraPose, MeasurementModel, PoseMap, StereoPinhole};
use crate::factors::BlockKind;
use crate::imu::{ideal_reading, integrate, ImuNoise, ImuSample, ImuState, GRAVITY};
use crate::manifold::{ManifoldPoint, UnitQuaternion};

#[derive(Debug, Clone, PartialEq)]
pub struct StereoConfig {
    pub seed: u64,
    /// Seconds of motion.
    pub duration: f64,
    pub camera_rate: f64,
    pub imu_rate: f64,
    /// Orbit radius and speed.
    pub radius: f64,
    pub speed: f64,
    /// Vertical sinusoid amplitude (m) and angular frequency (rad/s).
    pub vertical_amplitude: f64,
    pub vertical_frequency: f64,
    /// Amplitude of the roll/pitch rate wobble, rad/s.
    pub wobble: f64,
    pub landmarks: usize,
    /// Landmarks lie on a cylinder `wall_offset` outside the orbit.
    pub wall_offset: f64,
    pub wall_height: f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub baseline: f64,
    pub sigma_px: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    pub imu_noise: ImuNoise,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    /// Prior standard deviations for `(θ, v, b_g, b_a, r)`, one scalar each.
    pub prior_sigma: [f64; 5],
}

impl Default for StereoConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            duration: 10.0,
            camera_rate: 20.0,
            imu_rate: 200.0,
            radius: 5.0,
            speed: 1.0,
            vertical_amplitude: 0.3,
            vertical_frequency: 1.0,
            wobble: 0.05,
            landmarks: 150,
            wall_offset: 4.0,
            wall_height: 1.5,
            fx: 460.0,
            fy: 460.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
            baseline: 0.11,
            sigma_px: 0.05,
            min_depth: 0.5,
            max_depth: 15.0,
            imu_noise: ImuNoise::default(),
            gyro_bias: Vector3::new(0.002, -0.001, 0.0015),
            accel_bias: Vector3::new(0.02, -0.01, 0.015),
            prior_sigma: [0.005, 0.02, 0.003, 0.03, 0.005],
        }
    }
}

impl StereoConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("duration", self.duration),
            ("camera_rate", self.camera_rate),
            ("imu_rate", self.imu_rate),
            ("radius", self.radius),
            ("fx", self.fx),
            ("fy", self.fy),
            ("width", self.width),
            ("height", self.height),
            ("baseline", self.baseline),
            ("max_depth", self.max_depth),
        ] {
            check_positive(name, v)?;
        }
        for (name, v) in [
            ("speed", self.speed),
            ("vertical_amplitude", self.vertical_amplitude),
            ("vertical_frequency", self.vertical_frequency),
            ("wobble", self.wobble),
            ("wall_offset", self.wall_offset),
            ("wall_height", self.wall_height),
            ("sigma_px", self.sigma_px),
            ("min_depth", self.min_depth),
            ("gyro_noise", self.imu_noise.gyro),
            ("accel_noise", self.imu_noise.accel),
            ("gyro_bias_noise", self.imu_noise.gyro_bias),
            ("accel_bias_noise", self.imu_noise.accel_bias),
        ] {
            check_sigma(name, v)?;
        }
        for s in self.prior_sigma {
            check_sigma("prior_sigma", s)?;
        }
        let ratio = self.imu_rate / self.camera_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(SimError::Config(format!("imu_rate/camera_rate must be a positive integer, got {ratio}")));
        }
        Ok(())
    }

    /// IMU samples per camera frame.
    pub fn imu_per_frame(&self) -> usize {
        (self.imu_rate / self.camera_rate).round() as usize
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.camera_rate).floor() as usize + 1
    }

    pub fn stereo(&self) -> StereoPinhole {
        StereoPinhole { fx: self.fx, fy: self.fy, cx: self.cx, cy: self.cy, baseline: self.baseline, sigma_px: self.sigma_px }
    }

    /// True state at `t = 0`: on the orbit at `(R, 0, 0)`, heading along `+y`.
    pub fn initial_state(&self) -> ImuState {
        ImuState {
            q: UnitQuaternion::from_yaw(PI / 2.0),
            v: Vector3::new(0.0, self.speed, self.vertical_amplitude * self.vertical_frequency),
            bg: self.gyro_bias,
            ba: self.accel_bias,
            r: Vector3::new(self.radius, 0.0, 0.0),
        }
    }
}

/// Camera looking outward along the body `−y` axis, 5 cm off the IMU.
pub fn camera_extrinsics() -> ImuCameraPose {
    // camera axes in body coordinates: x_C = −x_B, y_C = −z_B, z_C = −y_B
    let r_ic = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, -1.0, 0.0);
    ImuCameraPose { q_ic: UnitQuaternion::from_rotation_matrix(&r_ic), r_ic: Vector3::new(0.0, -0.05, 0.0) }
}

/// Noise-free stereo measurement if the landmark is inside the image and the
/// depth bounds, perturbed by `noise`.
pub fn measure_stereo(
    config: &StereoConfig,
    camera_pose: &ManifoldPoint,
    landmark: &DVector<f64>,
    noise: &Vector3<f64>,
) -> Option<DVector<f64>> {
    let (q, r) = match (camera_pose.component(0), camera_pose.component(1)) {
        (Some(ManifoldPoint::Quaternion(q)), Some(ManifoldPoint::Euclidean(r))) => (*q, Vector3::new(r[0], r[1], r[2])),
        _ => return None,
    };
    let pc = q.inverse().rotate(&(Vector3::new(landmark[0], landmark[1], landmark[2]) - r));
    if pc.z < config.min_depth.max(1e-3) || pc.z > config.max_depth {
        return None;
    }
    let z = config.stereo().project_camera(&pc).ok()?;
    let inside = |u: f64, lim: f64| (0.0..=lim).contains(&u);
    if !(inside(z.x, config.width) && inside(z.y, config.width) && inside(z.z, config.height)) {
        return None;
    }
    Some(DVector::from_column_slice((z + noise).as_slice()))
}

/// Commanded world acceleration and body rate: constant yaw rate with radial
/// and vertical tracking, plus a small roll/pitch wobble.
fn command(c: &StereoConfig, s: &ImuState, t: f64) -> (Vector3<f64>, Vector3<f64>) {
    let omega = c.speed / c.radius;
    let (ph, vh) = (Vector3::new(s.r.x, s.r.y, 0.0), Vector3::new(s.v.x, s.v.y, 0.0));
    let rho = ph.norm().max(1e-9);
    let e = ph / rho;
    let mut a = Vector3::z().cross(&vh) * omega;
    a -= e * ((rho - c.radius) * 1.0 + vh.dot(&e) * 2.0);
    let (h, nu) = (c.vertical_amplitude, c.vertical_frequency);
    let (z_ref, zd_ref, zdd_ref) = (h * (nu * t).sin(), h * nu * (nu * t).cos(), -h * nu * nu * (nu * t).sin());
    a.z = zdd_ref + 4.0 * (zd_ref - s.v.z) + 4.0 * (z_ref - s.r.z);

    let rot = s.q.to_rotation_matrix();
    let x_b = rot.column(0);
    let heading = s.v.y.atan2(s.v.x);
    let yaw = x_b.y.atan2(x_b.x);
    let yaw_err = (heading - yaw + PI).rem_euclid(2.0 * PI) - PI;
    let world_rate = Vector3::new(0.0, 0.0, omega + 0.5 * yaw_err);
    let wobble = Vector3::new((1.3 * t).sin(), (0.7 * t + 1.0).sin(), 0.0) * c.wobble;
    let level = Vector3::new(rot[(2, 1)], -rot[(2, 0)], 0.0) * 0.5;
    (a, rot.transpose() * world_rate + wobble - level)
}

pub(super) fn generate(c: &StereoConfig, rng: &mut Xoshiro256PlusPlus) -> Result<Dataset, SimError> {
    let wall = c.radius + c.wall_offset;
    let landmarks: Vec<(u64, DVector<f64>)> = (0..c.landmarks as u64)
        .map(|id| {
            let phi = rng.random_range(-PI..PI);
            let z = rng.random_range(-c.wall_height..=c.wall_height);
            (id, DVector::from_vec(vec![wall * phi.cos(), wall * phi.sin(), z]))
        })
        .collect();

    let m = c.imu_per_frame();
    let frames = c.frame_count();
    let samples = (frames - 1) * m;
    let dt = 1.0 / c.imu_rate;
    let gyro_noise = Normal::new(0.0, c.imu_noise.gyro / dt.sqrt()).expect("validated");
    let accel_noise = Normal::new(0.0, c.imu_noise.accel / dt.sqrt()).expect("validated");
    let pixel_noise = Normal::new(0.0, c.sigma_px).expect("validated");
    let extrinsics = camera_extrinsics();

    let mut state = c.initial_state();
    let mut imu = Vec::with_capacity(samples);
    let mut truth = Vec::with_capacity(frames);
    let mut tracks = Vec::new();
    for j in 0..=samples {
        let t = j as f64 / c.imu_rate;
        if j % m == 0 {
            let k = j / m;
            let pose = ManifoldPoint::Product(vec![
                ManifoldPoint::Quaternion(state.q),
                ManifoldPoint::euclidean(state.r.as_slice()),
            ]);
            let cam = extrinsics.pose(&state.to_point())?;
            for (id, f) in &landmarks {
                let n = Vector3::from_fn(|_, _| pixel_noise.sample(rng));
                if let Some(z) = measure_stereo(c, &cam, f, &n) {
                    tracks.push(Track { t, frame: k, feature: *id, z });
                }
            }
            truth.push((t, pose));
        }
        if j == samples {
            break;
        }
        let (a, w) = command(c, &state, t);
        let (gyro, accel) = ideal_reading(&state.q.to_rotation_matrix(), &w, &a, &c.gyro_bias, &c.accel_bias, &GRAVITY);
        let exact = ImuSample { t, gyro, accel };
        state = integrate(&state, &[exact], (j + 1) as f64 / c.imu_rate, &GRAVITY, 1);
        imu.push(ImuSample {
            t,
            gyro: gyro + Vector3::from_fn(|_, _| gyro_noise.sample(rng)),
            accel: accel + Vector3::from_fn(|_, _| accel_noise.sample(rng)),
        });
    }
    Ok(Dataset { config: SimConfig::Stereo(c.clone()), landmarks, truth, imu, tracks })
}

pub(super) fn problem(c: &StereoConfig, d: &Dataset) -> Result<Problem, SimError> {
    let mut frames: Vec<FrameInput> = Vec::with_capacity(d.truth.len());
    let mut next = 0;
    for (k, (t, _)) in d.truth.iter().enumerate() {
        let transition: Option<Arc<dyn Transition>> = if k == 0 {
            while next < d.imu.len() && d.imu[next].t < *t {
                next += 1;
            }
            None
        } else {
            let start = next;
            while next < d.imu.len() && d.imu[next].t < *t {
                next += 1;
            }
            if start == next {
                return Err(SimError::Data(format!("no IMU samples between frames {} and {k}", k - 1)));
            }
            Some(Arc::new(ImuInterval {
                samples: d.imu[start..next].to_vec(),
                t_end: *t,
                noise: ImuNoise {
                    gyro: model_sigma(c.imu_noise.gyro),
                    accel: model_sigma(c.imu_noise.accel),
                    gyro_bias: model_sigma(c.imu_noise.gyro_bias),
                    accel_bias: model_sigma(c.imu_noise.accel_bias),
                },
                gravity: GRAVITY,
            }))
        };
        frames.push(FrameInput { index: k, t: *t, transition, observations: Vec::new() });
    }
    let stereo = StereoPinhole { sigma_px: model_sigma(c.sigma_px), ..c.stereo() };
    for tr in &d.tracks {
        if tr.z.len() != stereo.measurement_dim() {
            return Err(SimError::Data(format!("stereo track of feature {} has {} values", tr.feature, tr.z.len())));
        }
        frames[tr.frame].observations.push(Observation { landmark: tr.feature, z: tr.z.clone() });
    }
    let (q, r) = match (d.truth[0].1.component(0), d.truth[0].1.component(1)) {
        (Some(ManifoldPoint::Quaternion(q)), Some(ManifoldPoint::Euclidean(r))) if r.len() == 3 => {
            (*q, Vector3::new(r[0], r[1], r[2]))
        }
        _ => return Err(SimError::Data("stereo ground truth must be (q, r) poses".into())),
    };
    let init = c.initial_state();
    let prior = ImuState { q, v: init.v, bg: Vector3::zeros(), ba: Vector3::zeros(), r };
    let var = DVector::from_fn(15, |i, _| model_sigma(c.prior_sigma[i / 3]).powi(2));
    Ok(Problem {
        sensor: SensorModel {
            measurement: Arc::new(stereo),
            pose_map: Arc::new(camera_extrinsics()),
            process_kind: BlockKind::ImuState,
        },
        prior_mean: prior.to_point(),
        prior_covariance: DMatrix::from_diagonal(&var),
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optical_axis_point_has_expected_disparity() {
        let c = StereoConfig::default();
        let cam = ManifoldPoint::Product(vec![
            ManifoldPoint::Quaternion(UnitQuaternion::identity()),
            ManifoldPoint::euclidean(&[0.0, 0.0, 0.0]),
        ]);
        let z = measure_stereo(&c, &cam, &DVector::from_vec(vec![0.0, 0.0, 4.0]), &Vector3::zeros()).unwrap();
        assert!((z[0] - c.cx).abs() < 1e-12 && (z[2] - c.cy).abs() < 1e-12);
        assert!((z[0] - z[1] - c.fx * c.baseline / 4.0).abs() < 1e-12);
    }

    #[test]
    fn camera_looks_outward() {
        let s = StereoConfig::default().initial_state();
        let cam = camera_extrinsics().pose(&s.to_point()).unwrap();
        let q = match cam.component(0) {
            Some(ManifoldPoint::Quaternion(q)) => *q,
            _ => unreachable!(),
        };
        let axis = q.rotate(&Vector3::z());
        assert!((axis - Vector3::x()).norm() < 1e-12, "{axis}");
    }
}
