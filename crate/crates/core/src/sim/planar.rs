use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{check_positive, check_sigma, model_sigma, Dataset, SimConfig, SimError, Track};
use crate::estimators::{FrameInput, Observation, Problem, SensorModel, Transition};
use crate::factors::models::{IdentityPose, PlanarTranslation, Unicycle};
use crate::factors::BlockKind;
use crate::manifold::ManifoldPoint;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarConfig {
    pub seed: u64,
    pub steps: usize,
    pub dt: f64,
    /// Commanded forward speed, m/s.
    pub speed: f64,
    /// Commanded turn rate, rad/s. The default closes one circle.
    pub turn_rate: f64,
    pub landmarks: usize,
    /// Landmarks lie within this radial distance of the nominal circle.
    pub landmark_spread: f64,
    pub max_range: f64,
    /// Per-step process noise standard deviations for `(x, y, θ)`.
    pub process_sigma: [f64; 3],
    pub measurement_sigma: f64,
    /// Standard deviations of the prior on the first pose.
    pub prior_sigma: [f64; 3],
}

impl Default for PlanarConfig {
    fn default() -> Self {
        let (steps, dt) = (200, 0.1);
        Self {
            seed: 42,
            steps,
            dt,
            speed: 1.0,
            turn_rate: 2.0 * PI / (steps as f64 * dt),
            landmarks: 40,
            landmark_spread: 2.5,
            max_range: 4.0,
            process_sigma: [0.02, 0.02, 0.005],
            measurement_sigma: 0.05,
            prior_sigma: [0.01, 0.01, 0.005],
        }
    }
}

impl PlanarConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        check_positive("dt", self.dt)?;
        check_positive("max_range", self.max_range)?;
        check_sigma("landmark_spread", self.landmark_spread)?;
        check_sigma("speed", self.speed.abs())?;
        check_sigma("turn_rate", self.turn_rate.abs())?;
        check_sigma("measurement_sigma", self.measurement_sigma)?;
        for s in self.process_sigma.iter().chain(&self.prior_sigma) {
            check_sigma("sigma", *s)?;
        }
        Ok(())
    }

    /// Radius of the nominal circle; infinite for straight motion.
    pub fn radius(&self) -> f64 {
        if self.turn_rate == 0.0 {
            f64::INFINITY
        } else {
            self.speed / self.turn_rate.abs()
        }
    }

    /// Start on the circle centred at the origin, heading along it.
    pub fn start(&self) -> Vector3<f64> {
        if self.turn_rate == 0.0 {
            Vector3::zeros()
        } else {
            Vector3::new(self.radius(), 0.0, self.turn_rate.signum() * PI / 2.0)
        }
    }

    fn dynamics(&self) -> Unicycle {
        let var = self.process_sigma.map(|s| model_sigma(s).powi(2));
        Unicycle {
            v: self.speed,
            omega: self.turn_rate,
            dt: self.dt,
            noise: DMatrix::from_diagonal(&DVector::from_column_slice(&var)),
        }
    }
}

/// Noise-free unicycle poses `x_0 … x_steps` under constant inputs.
pub fn gen_trajectory_2d(start: Vector3<f64>, speed: f64, turn_rate: f64, dt: f64, steps: usize) -> Vec<Vector3<f64>> {
    let uni = Unicycle { v: speed, omega: turn_rate, dt, noise: DMatrix::zeros(3, 3) };
    let mut out = vec![start];
    for _ in 0..steps {
        let x = out.last().expect("non-empty");
        let (a, b, c) = uni.step(x.x, x.y, x.z);
        out.push(Vector3::new(a, b, c));
    }
    out
}

/// `z = f − x_pos + v`.
pub fn measure_planar(pose: &Vector3<f64>, landmark: &Vector2<f64>, noise: &Vector2<f64>) -> Vector2<f64> {
    landmark - pose.xy() + noise
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("validated sigma")
}

pub(super) fn generate(c: &PlanarConfig, rng: &mut Xoshiro256PlusPlus) -> Result<Dataset, SimError> {
    let r = if c.turn_rate == 0.0 { c.speed * c.dt * c.steps as f64 } else { c.radius() };
    let landmarks: Vec<(u64, DVector<f64>)> = (0..c.landmarks as u64)
        .map(|id| {
            let phi = rng.random_range(-PI..PI);
            let rho = r + c.landmark_spread * rng.random_range(-1.0..1.0);
            (id, DVector::from_vec(vec![rho * phi.cos(), rho * phi.sin()]))
        })
        .collect();

    let uni = c.dynamics();
    let w = c.process_sigma.map(normal);
    let mut poses = vec![c.start()];
    for _ in 0..c.steps {
        let x = poses.last().expect("non-empty");
        let (a, b, th) = uni.step(x.x, x.y, x.z);
        poses.push(Vector3::new(a + w[0].sample(rng), b + w[1].sample(rng), th + w[2].sample(rng)));
    }

    let v = normal(c.measurement_sigma);
    let mut tracks = Vec::new();
    for (k, x) in poses.iter().enumerate() {
        let t = k as f64 * c.dt;
        for (id, f) in &landmarks {
            let f = Vector2::new(f[0], f[1]);
            if (f - x.xy()).norm() > c.max_range {
                continue;
            }
            let z = measure_planar(x, &f, &Vector2::new(v.sample(rng), v.sample(rng)));
            tracks.push(Track { t, frame: k, feature: *id, z: DVector::from_column_slice(z.as_slice()) });
        }
    }
    let truth = poses
        .iter()
        .enumerate()
        .map(|(k, x)| (k as f64 * c.dt, ManifoldPoint::euclidean(x.as_slice())))
        .collect();
    Ok(Dataset { config: SimConfig::Planar(c.clone()), landmarks, truth, imu: Vec::new(), tracks })
}

pub(super) fn problem(c: &PlanarConfig, d: &Dataset) -> Result<Problem, SimError> {
    let transition: Arc<dyn Transition> = Arc::new(c.dynamics());
    let mut frames: Vec<FrameInput> = d
        .truth
        .iter()
        .enumerate()
        .map(|(k, (t, _))| FrameInput {
            index: k,
            t: *t,
            transition: (k > 0).then(|| transition.clone()),
            observations: Vec::new(),
        })
        .collect();
    for tr in &d.tracks {
        if tr.z.len() != 2 {
            return Err(SimError::Data(format!("planar track of feature {} has {} values", tr.feature, tr.z.len())));
        }
        frames[tr.frame].observations.push(Observation { landmark: tr.feature, z: tr.z.clone() });
    }
    let var = c.prior_sigma.map(|s| model_sigma(s).powi(2));
    Ok(Problem {
        sensor: SensorModel {
            measurement: Arc::new(PlanarTranslation::isotropic(model_sigma(c.measurement_sigma))),
            pose_map: Arc::new(IdentityPose),
            process_kind: BlockKind::Pose,
        },
        prior_mean: d.truth[0].1.clone(),
        prior_covariance: DMatrix::from_diagonal(&DVector::from_column_slice(&var)),
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_circle_closes() {
        let c = PlanarConfig::default();
        let xs = gen_trajectory_2d(c.start(), c.speed, c.turn_rate, c.dt, c.steps);
        let (a, b) = (xs[0], xs[c.steps]);
        assert!((a.xy() - b.xy()).norm() < 1e-6);
        assert!((b.z - a.z - 2.0 * PI).abs() < 1e-9);
    }

    #[test]
    fn straight_line_ends_at_ten_metres() {
        let xs = gen_trajectory_2d(Vector3::zeros(), 1.0, 0.0, 0.1, 100);
        assert!((xs[100] - Vector3::new(10.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn standing_still_stays_put() {
        let xs = gen_trajectory_2d(Vector3::new(1.0, 2.0, 0.3), 0.0, 0.0, 0.1, 10);
        assert!(xs.iter().all(|x| *x == Vector3::new(1.0, 2.0, 0.3)));
    }

    #[test]
    fn planar_measurement_example() {
        let z = measure_planar(&Vector3::new(1.0, 1.0, 0.7), &Vector2::new(3.0, 4.0), &Vector2::zeros());
        assert_eq!(z, Vector2::new(2.0, 3.0));
    }

    #[test]
    fn tracks_respect_range() {
        let c = PlanarConfig::default();
        let d = generate(&c, &mut rand::SeedableRng::seed_from_u64(1)).unwrap();
        let lm: std::collections::HashMap<_, _> = d.landmarks.iter().cloned().collect();
        for tr in &d.tracks {
            let p = d.truth[tr.frame].1.as_euclidean().unwrap();
            let f = &lm[&tr.feature];
            let dist = ((f[0] - p[0]).powi(2) + (f[1] - p[1]).powi(2)).sqrt();
            assert!(dist <= c.max_range);
        }
        assert!(!d.tracks.is_empty());
    }
}
