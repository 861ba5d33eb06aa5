//! Filters and smoothers assembled from Gauss-Newton steps and
//! marginalization, plus the classical update formulas they reduce to.

pub mod ekf;
pub mod equivalence;
pub mod msckf;
pub mod schedule;
pub mod triangulate;
pub mod window;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::factors::models::{MeasurementModel, PoseMap, StepDynamics, Unicycle};
use crate::factors::{BlockKind, FactorError};
use crate::imu::{ImuNoise, ImuSample, ImuState, ImuStep};
use crate::manifold::ManifoldPoint;
use crate::optimizer::OptimizerError;

pub use schedule::{EstimatorKind, EstimatorSchedule, FeaturePolicy, Form};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("{0}")]
    Configuration(String),
    #[error("estimator diverged at frame {frame}: {reason}")]
    Divergence { frame: usize, reason: String },
}

impl From<FactorError> for EstimatorError {
    fn from(e: FactorError) -> Self {
        Self::Optimizer(e.into())
    }
}

impl From<crate::manifold::ManifoldError> for EstimatorError {
    fn from(e: crate::manifold::ManifoldError) -> Self {
        Self::Optimizer(e.into())
    }
}

/// Source of the discrete dynamics for one frame interval. IMU intervals need
/// the state they are linearized about to fix `Σ_w`.
pub trait Transition: Send + Sync + fmt::Debug {
    fn at(&self, x: &ManifoldPoint) -> Result<Arc<dyn StepDynamics>, FactorError>;
}

impl Transition for Unicycle {
    fn at(&self, _x: &ManifoldPoint) -> Result<Arc<dyn StepDynamics>, FactorError> {
        Ok(Arc::new(self.clone()))
    }
}

/// IMU samples covering `[samples[0].t, t_end)`.
#[derive(Debug, Clone)]
pub struct ImuInterval {
    pub samples: Vec<ImuSample>,
    pub t_end: f64,
    pub noise: ImuNoise,
    pub gravity: Vector3<f64>,
}

impl Transition for ImuInterval {
    fn at(&self, x: &ManifoldPoint) -> Result<Arc<dyn StepDynamics>, FactorError> {
        let s = ImuState::from_point(x)?;
        Ok(Arc::new(ImuStep::new(self.samples.clone(), self.t_end, self.noise, self.gravity, &s)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub landmark: u64,
    pub z: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct FrameInput {
    pub index: usize,
    pub t: f64,
    /// Dynamics from the previous frame; `None` for the first frame.
    pub transition: Option<Arc<dyn Transition>>,
    pub observations: Vec<Observation>,
}

/// Everything the estimators need to know about the sensors.
#[derive(Debug, Clone)]
pub struct SensorModel {
    pub measurement: Arc<dyn MeasurementModel>,
    /// Map from the process state to the observing pose.
    pub pose_map: Arc<dyn PoseMap>,
    pub process_kind: BlockKind,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub sensor: SensorModel,
    pub prior_mean: ManifoldPoint,
    pub prior_covariance: DMatrix<f64>,
    pub frames: Vec<FrameInput>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    pub gn_iterations: usize,
    pub marginalizations: usize,
    pub features_processed: usize,
    pub features_dropped: usize,
    /// Largest number of frame states held at once.
    pub peak_window: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Process-state estimate after each frame.
    pub estimates: Vec<(f64, ManifoldPoint)>,
    pub stats: RunStats,
}

/// Integrates the dynamics from the prior mean without using measurements.
pub fn dead_reckoning(problem: &Problem) -> Result<RunOutput, EstimatorError> {
    let mut x = problem.prior_mean.clone();
    let mut estimates = Vec::with_capacity(problem.frames.len());
    for frame in &problem.frames {
        if let Some(tr) = &frame.transition {
            x = tr.at(&x)?.propagate(&x)?;
        }
        estimates.push((frame.t, x.clone()));
    }
    Ok(RunOutput { estimates, stats: RunStats { peak_window: 1, ..RunStats::default() } })
}

/// Runs the estimator described by `schedule`.
pub fn run(problem: &Problem, schedule: &EstimatorSchedule) -> Result<RunOutput, EstimatorError> {
    match schedule.kind {
        EstimatorKind::DeadReckoning => dead_reckoning(problem),
        EstimatorKind::Ekf | EstimatorKind::IteratedEkf => {
            if problem.prior_mean.as_euclidean().is_some() {
                ekf::ekf_run(problem, schedule)
            } else {
                window::window_run(problem, schedule)
            }
        }
        EstimatorKind::Msckf | EstimatorKind::IteratedMsckf => msckf::msckf_run(problem, schedule),
        EstimatorKind::SlidingWindow | EstimatorKind::Keyframe => window::window_run(problem, schedule),
    }
}
