//! Randomized checks that each classical filter sub-step and its
//! optimization counterpart produce the same belief.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::ekf::{self, EkfBelief};
use super::msckf::{self, ClonedPose, FeatureObservations, MsckfBelief, UpdateForm};
use super::EstimatorError;
use crate::factors::models::{
    spatial_pose_point, ImuCameraPose, MeasurementModel, PinholeNormalized, PlanarBody, PoseMap, StepDynamics, Unicycle,
};
use crate::factors::{BlockKind, FactorError};
use crate::imu::{ImuNoise, ImuSample, ImuState, ImuStep, GRAVITY};
use crate::manifold::{ManifoldPoint, UnitQuaternion};
use crate::optimizer::PINV_RCOND;

/// Bound on the tangent-space distance between the two means.
pub const MEAN_TOLERANCE: f64 = 1e-8;
/// Bound on `‖Σ_a − Σ_b‖_F / ‖Σ_a‖_F`.
pub const COVARIANCE_TOLERANCE: f64 = 1e-7;
/// Bound for the pose augmentation at the smallest studied `ε`.
pub const AUGMENT_TOLERANCE: f64 = 1e-6;
/// Regularization weights studied for the pose augmentation.
pub const EPSILONS: [f64; 3] = [1e-6, 1e-9, 1e-12];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EquivalenceKind {
    EkfAugment,
    EkfUpdate,
    EkfPropagate,
    MsckfAugment,
    MsckfUpdate,
    MsckfPropagate,
}

impl EquivalenceKind {
    pub const ALL: [Self; 6] = [
        Self::EkfAugment,
        Self::EkfUpdate,
        Self::EkfPropagate,
        Self::MsckfAugment,
        Self::MsckfUpdate,
        Self::MsckfPropagate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::EkfAugment => "ekf_aug",
            Self::EkfUpdate => "ekf_update",
            Self::EkfPropagate => "ekf_prop",
            Self::MsckfAugment => "msckf_aug",
            Self::MsckfUpdate => "msckf_update",
            Self::MsckfPropagate => "msckf_prop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn tolerances(self) -> (f64, f64) {
        match self {
            Self::MsckfAugment => (AUGMENT_TOLERANCE, AUGMENT_TOLERANCE),
            _ => (MEAN_TOLERANCE, COVARIANCE_TOLERANCE),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub kind: EquivalenceKind,
    pub trials: usize,
    pub max_mean: f64,
    pub max_cov: f64,
    pub mean_tolerance: f64,
    pub cov_tolerance: f64,
    /// For the pose augmentation: `(ε, max relative covariance distance)`.
    pub epsilon_study: Option<Vec<(f64, f64)>>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.max_mean <= self.mean_tolerance && self.max_cov <= self.cov_tolerance
    }
}

struct Distance {
    mean: f64,
    cov: f64,
}

fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(f64::MIN_POSITIVE)
}

fn ekf_distance(a: &EkfBelief, b: &EkfBelief) -> Distance {
    Distance { mean: (&a.mean - &b.mean).norm(), cov: rel_frobenius(&a.covariance, &b.covariance) }
}

fn msckf_distance(a: &MsckfBelief, b: &MsckfBelief) -> Result<Distance, EstimatorError> {
    let mean = a.to_state()?.boxminus(&b.to_state()?)?.norm();
    Ok(Distance { mean, cov: rel_frobenius(&a.covariance, &b.covariance) })
}

/// Well-conditioned SPD matrix with eigenvalues in roughly `[0.05, 0.5]`.
fn random_spd(rng: &mut Xoshiro256PlusPlus, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = a.qr().q();
    let d = DVector::from_fn(n, |_, _| rng.random_range(0.05..0.5));
    &q * DMatrix::from_diagonal(&d) * q.transpose()
}

fn gaussian_vec(rng: &mut Xoshiro256PlusPlus, n: usize, sigma: f64) -> DVector<f64> {
    let dist = Normal::new(0.0, sigma).expect("finite sigma");
    DVector::from_fn(n, |_, _| dist.sample(rng))
}

fn gaussian3(rng: &mut Xoshiro256PlusPlus, sigma: f64) -> Vector3<f64> {
    let v = gaussian_vec(rng, 3, sigma);
    Vector3::new(v[0], v[1], v[2])
}

fn random_planar_pose(rng: &mut Xoshiro256PlusPlus) -> DVector<f64> {
    DVector::from_vec(vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-PI..PI)])
}

/// Body-frame point at range 2 to 8 in a random direction.
fn random_body_point(rng: &mut Xoshiro256PlusPlus) -> DVector<f64> {
    let (rho, phi) = (rng.random_range(2.0..8.0), rng.random_range(-PI..PI));
    DVector::from_vec(vec![rho * phi.cos(), rho * phi.sin()])
}

fn random_ekf_belief(rng: &mut Xoshiro256PlusPlus, model: &PlanarBody, features: usize) -> Result<EkfBelief, EstimatorError> {
    let pose = random_planar_pose(rng);
    let mut belief = EkfBelief::new(pose.clone(), DMatrix::zeros(3, 3), 2);
    let new: Vec<(u64, DVector<f64>)> = (0..features as u64).map(|l| (l, random_body_point(rng))).collect();
    belief = ekf::augment_classical(&belief, model, &new)?;
    belief.covariance = random_spd(rng, belief.mean.len());
    Ok(belief)
}

fn random_imu_state(rng: &mut Xoshiro256PlusPlus) -> ImuState {
    ImuState {
        q: UnitQuaternion::from_rotvec(&gaussian3(rng, 1.0)),
        v: gaussian3(rng, 1.0),
        bg: gaussian3(rng, 0.01),
        ba: gaussian3(rng, 0.05),
        r: gaussian3(rng, 3.0),
    }
}

fn random_msckf_belief(rng: &mut Xoshiro256PlusPlus, clones: &[ManifoldPoint]) -> MsckfBelief {
    let mut belief = MsckfBelief::new(random_imu_state(rng).to_point(), BlockKind::ImuState, DMatrix::zeros(0, 0));
    for (i, pose) in clones.iter().enumerate() {
        belief.clones.push(ClonedPose { frame: i, pose: pose.clone() });
    }
    belief.covariance = random_spd(rng, belief.dim());
    belief
}

fn random_spatial_pose(rng: &mut Xoshiro256PlusPlus) -> ManifoldPoint {
    spatial_pose_point(UnitQuaternion::from_rotvec(&gaussian3(rng, 1.0)), gaussian3(rng, 3.0))
}

fn trial(kind: EquivalenceKind, rng: &mut Xoshiro256PlusPlus) -> Result<(Distance, Vec<f64>), EstimatorError> {
    let model = PlanarBody::isotropic(0.1);
    let planar: Arc<dyn MeasurementModel> = Arc::new(model.clone());
    match kind {
        EquivalenceKind::EkfAugment => {
            let existing = rng.random_range(0..3);
            let belief = random_ekf_belief(rng, &model, existing)?;
            let n = rng.random_range(1..=3) as u64;
            let new: Vec<_> = (0..n).map(|l| (100 + l, random_body_point(rng))).collect();
            let a = ekf::augment_classical(&belief, &model, &new)?;
            let b = ekf::augment_opt(&belief, &planar, &new)?;
            Ok((ekf_distance(&a, &b), Vec::new()))
        }
        EquivalenceKind::EkfUpdate => {
            let count = rng.random_range(1..=4);
            let belief = random_ekf_belief(rng, &model, count)?;
            let pose = belief.pose_point();
            let mut obs = Vec::new();
            for slot in 0..count {
                if obs.is_empty() || rng.random_bool(0.7) {
                    let z = model.predict(&pose, &belief.feature(slot))? + gaussian_vec(rng, 2, 0.1);
                    obs.push((slot, z));
                }
            }
            let a = ekf::update_classical(&belief, &model, &obs)?;
            let b = ekf::update_opt(&belief, &planar, &obs)?;
            Ok((ekf_distance(&a, &b), Vec::new()))
        }
        EquivalenceKind::EkfPropagate => {
            let count = rng.random_range(0..3);
            let belief = random_ekf_belief(rng, &model, count)?;
            let noise = DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.01, 0.004]));
            let uni = Unicycle { v: rng.random_range(0.2..2.0), omega: rng.random_range(-1.0..1.0), dt: 0.1, noise };
            let dynamics: Arc<dyn StepDynamics> = Arc::new(uni);
            let a = ekf::propagate_classical(&belief, dynamics.as_ref())?;
            let b = ekf::propagate_opt(&belief, &dynamics)?;
            Ok((ekf_distance(&a, &b), Vec::new()))
        }
        EquivalenceKind::MsckfAugment => {
            let existing: Vec<_> = (0..rng.random_range(0..3)).map(|_| random_spatial_pose(rng)).collect();
            let belief = random_msckf_belief(rng, &existing);
            let extrinsics = ImuCameraPose {
                q_ic: UnitQuaternion::from_rotvec(&gaussian3(rng, 1.0)),
                r_ic: gaussian3(rng, 0.2),
            };
            let pose_map: Arc<dyn PoseMap> = Arc::new(extrinsics);
            let frame = existing.len();
            let a = msckf::pose_augment(&belief, frame, pose_map.as_ref())?;
            let mut study = Vec::new();
            let mut last = None;
            for eps in EPSILONS {
                let b = msckf::pose_augment_epsilon(&belief, frame, &pose_map, eps)?;
                let d = msckf_distance(&a, &b)?;
                study.push(d.cov);
                last = Some(d);
            }
            Ok((last.expect("non-empty study"), study))
        }
        EquivalenceKind::MsckfUpdate => {
            let pinhole = PinholeNormalized::isotropic(0.01);
            let clones: Vec<ManifoldPoint> = (0..rng.random_range(2..=4))
                .map(|_| {
                    let q = UnitQuaternion::from_rotvec(&gaussian3(rng, 0.1));
                    let r = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..0.0));
                    spatial_pose_point(q, r)
                })
                .collect();
            let belief = random_msckf_belief(rng, &clones);
            let mut feats = Vec::new();
            for l in 0..rng.random_range(1..=3u64) {
                let f = DVector::from_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(4.0..6.0)]);
                let mut observations = Vec::new();
                for (i, pose) in clones.iter().enumerate() {
                    if observations.len() < 2 || rng.random_bool(0.7) {
                        observations.push((i, pinhole.predict(pose, &f)? + gaussian_vec(rng, 2, 0.01)));
                    }
                }
                let position = &f + gaussian_vec(rng, 3, 0.05);
                feats.push(FeatureObservations { landmark: l, position, observations });
            }
            let shared: Arc<dyn MeasurementModel> = Arc::new(pinhole.clone());
            let b = msckf::feature_update_marginalize(&belief, &shared, &feats, PINV_RCOND)?;
            let (info, _) = msckf::feature_update_nullspace(&belief, &pinhole, &feats, UpdateForm::Information)?;
            let (kalman, _) = msckf::feature_update_nullspace(&belief, &pinhole, &feats, UpdateForm::Covariance)?;
            let (d1, d2) = (msckf_distance(&info, &b)?, msckf_distance(&kalman, &b)?);
            Ok((Distance { mean: d1.mean.max(d2.mean), cov: d1.cov.max(d2.cov) }, Vec::new()))
        }
        EquivalenceKind::MsckfPropagate => {
            let existing: Vec<_> = (0..rng.random_range(0..3)).map(|_| random_spatial_pose(rng)).collect();
            let belief = random_msckf_belief(rng, &existing);
            let state = ImuState::from_point(&belief.process)?;
            let samples: Vec<ImuSample> = (0..10)
                .map(|k| ImuSample {
                    t: k as f64 * 0.005,
                    gyro: gaussian3(rng, 0.3),
                    accel: Vector3::new(0.0, 0.0, 9.81) + gaussian3(rng, 0.5),
                })
                .collect();
            let noise = ImuNoise { gyro: 1e-2, accel: 1e-1, gyro_bias: 1e-3, accel_bias: 1e-2 };
            let dynamics: Arc<dyn StepDynamics> = Arc::new(ImuStep::new(samples, 0.05, noise, GRAVITY, &state).map_err(FactorError::from)?);
            let a = msckf::propagate_classical(&belief, dynamics.as_ref())?;
            let b = msckf::propagate_marginalize(&belief, &dynamics, PINV_RCOND)?;
            Ok((msckf_distance(&a, &b)?, Vec::new()))
        }
    }
}

/// Runs `trials` random instances of `kind` and reports the worst distances.
pub fn check(kind: EquivalenceKind, trials: usize, seed: u64) -> Result<EquivalenceReport, EstimatorError> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let (mean_tolerance, cov_tolerance) = kind.tolerances();
    let mut report = EquivalenceReport {
        kind,
        trials,
        max_mean: 0.0,
        max_cov: 0.0,
        mean_tolerance,
        cov_tolerance,
        epsilon_study: (kind == EquivalenceKind::MsckfAugment).then(|| EPSILONS.iter().map(|&e| (e, 0.0)).collect()),
    };
    for _ in 0..trials {
        let (d, study) = trial(kind, &mut rng)?;
        report.max_mean = report.max_mean.max(d.mean);
        report.max_cov = report.max_cov.max(d.cov);
        if let Some(s) = report.epsilon_study.as_mut() {
            for (entry, v) in s.iter_mut().zip(study) {
                entry.1 = entry.1.max(v);
            }
        }
    }
    Ok(report)
}
