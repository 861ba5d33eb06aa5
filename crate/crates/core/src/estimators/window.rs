//! Sliding-window and keyframe smoothers: per frame, add the new state and
//! its measurements, marginalize what leaves the window, then take
//! Gauss-Newton steps.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use super::{EstimatorError, EstimatorKind, EstimatorSchedule, FeaturePolicy, FrameInput, Problem, RunOutput, RunStats};
use crate::factors::{
    sqrt_info_from_covariance, BlockId, BlockKind, DynamicsResidual, MeasurementResidual, ResidualBlock,
    ResidualKind, RunningCost,
};
use crate::manifold::ManifoldPoint;
use crate::optimizer::{gauss_newton_solve, marginalize, MarginalizationScope, OptimizerError, SolveOptions};

const FEATURE_BASE: u64 = 1 << 40;

#[derive(Debug, Clone)]
struct Slot {
    index: usize,
    id: BlockId,
    keyframe: bool,
    landmarks: BTreeSet<u64>,
}

/// Running state of a window estimator.
#[derive(Debug, Clone)]
pub struct WindowEstimator {
    schedule: EstimatorSchedule,
    cost: RunningCost,
    frames: VecDeque<Slot>,
    /// Landmark id to live feature block.
    features: BTreeMap<u64, BlockId>,
    next_feature: u64,
    pub stats: RunStats,
}

impl WindowEstimator {
    pub fn new(schedule: EstimatorSchedule) -> Result<Self, EstimatorError> {
        schedule.validate()?;
        Ok(Self {
            schedule,
            cost: RunningCost::new(),
            frames: VecDeque::new(),
            features: BTreeMap::new(),
            next_feature: FEATURE_BASE,
            stats: RunStats::default(),
        })
    }

    pub fn cost(&self) -> &RunningCost {
        &self.cost
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn keyframe_count(&self) -> usize {
        self.frames.iter().filter(|s| s.keyframe).count()
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    pub fn latest(&self) -> Option<&ManifoldPoint> {
        self.frames.back().and_then(|s| self.cost.state().get(s.id).ok())
    }

    fn limits(&self) -> (usize, usize) {
        match self.schedule.kind {
            EstimatorKind::Keyframe => (self.schedule.window, self.schedule.keyframes),
            _ => (self.schedule.window, 0),
        }
    }

    /// Adds one frame and returns the current estimate of its state.
    pub fn step(&mut self, problem: &Problem, frame: &FrameInput) -> Result<ManifoldPoint, EstimatorError> {
        let id = BlockId(frame.index as u64);
        match (&frame.transition, self.frames.back()) {
            (Some(tr), Some(prev)) => {
                let x_prev = self.cost.state().get(prev.id)?.clone();
                let dynamics = tr.at(&x_prev)?;
                let init = dynamics.propagate(&x_prev)?;
                self.cost.add_block(id, problem.sensor.process_kind, init)?;
                let sqrt_info = sqrt_info_from_covariance(dynamics.noise_covariance())?;
                self.cost.add_residual(ResidualBlock::new(
                    ResidualKind::Dynamics { step: frame.index as u64 },
                    vec![prev.id, id],
                    sqrt_info,
                    Arc::new(DynamicsResidual { dynamics }),
                )?)?;
            }
            (None, None) => {
                self.cost.add_block(id, problem.sensor.process_kind, problem.prior_mean.clone())?;
                self.cost.add_residual(ResidualBlock::prior(
                    vec![id],
                    vec![problem.prior_mean.clone()],
                    &problem.prior_covariance,
                )?)?;
            }
            _ => {
                return Err(EstimatorError::Configuration(format!(
                    "frame {} has inconsistent dynamics input",
                    frame.index
                )))
            }
        }

        let mut landmarks = BTreeSet::new();
        let mut obs = BTreeMap::new();
        for o in &frame.observations {
            if landmarks.insert(o.landmark) {
                obs.insert(o.landmark, &o.z);
            }
        }
        let keyframe = match (self.schedule.kind, self.frames.iter().rev().find(|s| s.keyframe)) {
            (EstimatorKind::Keyframe, Some(kf)) => {
                let ratio = if kf.landmarks.is_empty() {
                    0.0
                } else {
                    kf.landmarks.intersection(&landmarks).count() as f64 / kf.landmarks.len() as f64
                };
                ratio <= self.schedule.match_threshold
            }
            _ => true,
        };
        self.frames.push_back(Slot { index: frame.index, id, keyframe, landmarks });

        while let Some(victim) = self.next_victim() {
            self.marginalize_frame(victim)?;
        }
        self.stats.peak_window = self.stats.peak_window.max(self.frames.len());

        let pose = problem.sensor.pose_map.pose(self.cost.state().get(id)?)?;
        let model = &problem.sensor.measurement;
        let sqrt_info = sqrt_info_from_covariance(&model.noise_covariance())?;
        for (&landmark, &z) in &obs {
            let fid = match self.features.get(&landmark) {
                Some(&fid) => fid,
                None => {
                    let f = model.inverse(&pose, z).ok_or_else(|| {
                        EstimatorError::Configuration("window estimators need an invertible measurement model".into())
                    })??;
                    let fid = BlockId(self.next_feature);
                    self.next_feature += 1;
                    self.cost.add_block(fid, BlockKind::Feature, ManifoldPoint::Euclidean(f))?;
                    self.features.insert(landmark, fid);
                    fid
                }
            };
            self.cost.add_residual(ResidualBlock::new(
                ResidualKind::Measurement { frame: frame.index as u64, feature: landmark },
                vec![id, fid],
                sqrt_info.clone(),
                Arc::new(MeasurementResidual {
                    model: model.clone(),
                    pose_map: problem.sensor.pose_map.clone(),
                    z: z.clone(),
                }),
            )?)?;
        }

        let opts = SolveOptions {
            max_iterations: self.schedule.gn_iters,
            step_tolerance: self.schedule.step_tolerance,
            ..SolveOptions::default()
        };
        let x0 = self.cost.state().clone();
        let report = gauss_newton_solve(&self.cost, &x0, &opts).map_err(|e| match e {
            OptimizerError::Divergence(reason) => EstimatorError::Divergence { frame: frame.index, reason },
            other => other.into(),
        })?;
        self.stats.gn_iterations += report.iterations;
        self.cost.set_values(report.mean)?;
        Ok(self.cost.state().get(id)?.clone())
    }

    /// Position in `frames` of the next frame to leave the window.
    fn next_victim(&self) -> Option<usize> {
        let (n, k) = self.limits();
        let len = self.frames.len();
        if self.schedule.kind != EstimatorKind::Keyframe {
            return (len > n).then_some(0);
        }
        let recent = len.saturating_sub(n);
        if let Some(pos) = (0..recent).find(|&i| !self.frames[i].keyframe) {
            return Some(pos);
        }
        (recent > k).then_some(0)
    }

    fn marginalize_frame(&mut self, pos: usize) -> Result<(), EstimatorError> {
        let slot = self.frames.remove(pos).expect("victim in window");
        let mut marg = vec![slot.id];
        if self.schedule.feature_policy == FeaturePolicy::MarginalizeWithFrame {
            let current = self.frames.back().map(|s| &s.landmarks);
            for (&landmark, &fid) in &self.features {
                if current.is_some_and(|c| c.contains(&landmark)) {
                    continue;
                }
                let frames: Vec<u64> = self
                    .cost
                    .residuals()
                    .iter()
                    .filter_map(|r| match r.kind {
                        ResidualKind::Measurement { frame, .. } if r.blocks.contains(&fid) => Some(frame),
                        _ => None,
                    })
                    .collect();
                if !frames.is_empty() && frames.iter().all(|&f| f == slot.index as u64) {
                    marg.push(fid);
                }
            }
        }
        let x = self.cost.state().clone();
        marginalize(&mut self.cost, &x, &marg, MarginalizationScope::Touching)?;
        self.features.retain(|_, fid| !marg.contains(fid));
        self.stats.marginalizations += 1;
        Ok(())
    }
}

/// SWF, keyframe, or EKF-as-SWF(1) run over every frame of `problem`.
pub fn window_run(problem: &Problem, schedule: &EstimatorSchedule) -> Result<RunOutput, EstimatorError> {
    let mut schedule = schedule.clone();
    if matches!(schedule.kind, EstimatorKind::Ekf | EstimatorKind::IteratedEkf) {
        schedule.window = 1;
        schedule.feature_policy = FeaturePolicy::KeepAll;
        if schedule.kind == EstimatorKind::Ekf {
            schedule.gn_iters = 1;
        }
    }
    let mut est = WindowEstimator::new(schedule)?;
    let mut estimates = Vec::with_capacity(problem.frames.len());
    for frame in &problem.frames {
        let x = est.step(problem, frame)?;
        if !x.is_finite() {
            return Err(EstimatorError::Divergence { frame: frame.index, reason: "non-finite mean".into() });
        }
        estimates.push((frame.t, x));
    }
    Ok(RunOutput { estimates, stats: est.stats })
}
