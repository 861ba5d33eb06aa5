//! Multi-state constraint filter: a process state plus a bounded window of
//! cloned sensor poses. Features never enter the state; their measurements
//! are used once, either through the nullspace projection or by
//! marginalizing the features out of the running cost.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use log::debug;
use nalgebra::{DMatrix, DVector};

use super::triangulate::triangulate;
use super::{EstimatorError, EstimatorKind, EstimatorSchedule, Form, Problem, RunOutput, RunStats};
use crate::factors::models::{IdentityPose, MeasurementModel, PoseMap, StepDynamics};
use crate::factors::{
    sqrt_info_from_covariance, BlockId, BlockKind, DynamicsResidual, FactorError, FullState, GaussianBelief,
    MeasurementResidual, PoseLinkResidual, ResidualBlock, ResidualKind, RunningCost,
};
use crate::manifold::ManifoldPoint;
use crate::optimizer::{
    gauss_newton_solve, gauss_newton_step_with, marginalize_with, symmetrize, LinearSolver, MarginalizationScope,
    OptimizerError, SolveOptions, PINV_RCOND,
};

pub const PROCESS: BlockId = BlockId(1 << 40);
const NEXT_PROCESS: BlockId = BlockId((1 << 40) + 1);

fn clone_id(frame: usize) -> BlockId {
    BlockId(frame as u64)
}

fn feature_id(landmark: u64) -> BlockId {
    BlockId((1 << 41) + landmark)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClonedPose {
    pub frame: usize,
    pub pose: ManifoldPoint,
}

/// Process state and cloned poses with their joint tangent covariance,
/// ordered `(x_process, x₁, …, x_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MsckfBelief {
    pub process: ManifoldPoint,
    pub process_kind: BlockKind,
    pub clones: Vec<ClonedPose>,
    pub covariance: DMatrix<f64>,
}

impl MsckfBelief {
    pub fn new(process: ManifoldPoint, process_kind: BlockKind, covariance: DMatrix<f64>) -> Self {
        Self { process, process_kind, clones: Vec::new(), covariance }
    }

    pub fn dim(&self) -> usize {
        self.process.tangent_dim() + self.clones.iter().map(|c| c.pose.tangent_dim()).sum::<usize>()
    }

    pub fn clone_frames(&self) -> Vec<usize> {
        self.clones.iter().map(|c| c.frame).collect()
    }

    fn clone_offset(&self, i: usize) -> usize {
        self.process.tangent_dim() + self.clones[..i].iter().map(|c| c.pose.tangent_dim()).sum::<usize>()
    }

    fn check(&self) -> Result<(), EstimatorError> {
        let d = self.dim();
        if self.covariance.nrows() != d || self.covariance.ncols() != d {
            return Err(FactorError::Dimension { what: "MSCKF covariance", expected: d, got: self.covariance.nrows() }
                .into());
        }
        Ok(())
    }

    pub fn to_state(&self) -> Result<FullState, FactorError> {
        let mut s = FullState::new();
        s.insert(PROCESS, self.process_kind, self.process.clone())?;
        for c in &self.clones {
            s.insert(clone_id(c.frame), BlockKind::Pose, c.pose.clone())?;
        }
        Ok(s)
    }

    pub fn to_gaussian(&self) -> Result<GaussianBelief, FactorError> {
        GaussianBelief::new(self.to_state()?, self.covariance.clone())
    }

    /// Inverse of [`Self::to_state`] for a state ordered `(process, clones…)`.
    fn from_state(&self, state: &FullState, covariance: DMatrix<f64>) -> Self {
        let blocks = state.blocks();
        let clones = blocks[1..]
            .iter()
            .map(|b| ClonedPose { frame: b.id.0 as usize, pose: b.value.clone() })
            .collect();
        Self {
            process: blocks[0].value.clone(),
            process_kind: self.process_kind,
            clones,
            covariance: symmetrize(&covariance),
        }
    }

    pub fn boxplus(&self, delta: &DVector<f64>) -> Result<Self, EstimatorError> {
        let state = self.to_state()?.boxplus(delta)?;
        Ok(self.from_state(&state, self.covariance.clone()))
    }

    /// Drops the clones of `frames`; the marginal of a Gaussian is the
    /// corresponding sub-block.
    pub fn drop_clones(&self, frames: &[usize]) -> Self {
        let mut keep = Vec::new();
        keep.extend(0..self.process.tangent_dim());
        let mut clones = Vec::new();
        for (i, c) in self.clones.iter().enumerate() {
            if !frames.contains(&c.frame) {
                let off = self.clone_offset(i);
                keep.extend(off..off + c.pose.tangent_dim());
                clones.push(c.clone());
            }
        }
        let cov = DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.covariance[(keep[i], keep[j])]);
        Self { process: self.process.clone(), process_kind: self.process_kind, clones, covariance: cov }
    }
}

/// Classical pose augmentation: append `ψ(x)` and `Σ ← [I; J] Σ [I; J]ᵀ`
/// with `J = [∂ψ/∂x 0]`.
pub fn pose_augment(belief: &MsckfBelief, frame: usize, pose_map: &dyn PoseMap) -> Result<MsckfBelief, EstimatorError> {
    belief.check()?;
    let d = belief.dim();
    let dp = belief.process.tangent_dim();
    let pose = pose_map.pose(&belief.process)?;
    let psi = pose_map.jacobian(&belief.process)?;
    let k = pose.tangent_dim();
    let mut t = DMatrix::zeros(d + k, d);
    t.view_mut((0, 0), (d, d)).fill_diagonal(1.0);
    t.view_mut((d, 0), (k, dp)).copy_from(&psi);
    let cov = &t * &belief.covariance * t.transpose();
    let mut out = belief.clone();
    out.clones.push(ClonedPose { frame, pose });
    out.covariance = symmetrize(&cov);
    Ok(out)
}

/// Pose augmentation as one Gauss-Newton step on the prior plus
/// `‖x_{n+1} ⊟ ψ(x)‖²/ε`, solved by QR so that small `ε` is not truncated.
pub fn pose_augment_epsilon(
    belief: &MsckfBelief,
    frame: usize,
    pose_map: &Arc<dyn PoseMap>,
    epsilon: f64,
) -> Result<MsckfBelief, EstimatorError> {
    belief.check()?;
    let mut cost = belief.to_gaussian()?.to_cost()?;
    let pose = pose_map.pose(&belief.process)?;
    let k = pose.tangent_dim();
    cost.add_block(clone_id(frame), BlockKind::Pose, pose)?;
    cost.add_residual(ResidualBlock::new(
        ResidualKind::Constraint { frame: frame as u64 },
        vec![PROCESS, clone_id(frame)],
        DMatrix::identity(k, k) / epsilon.sqrt(),
        Arc::new(PoseLinkResidual { pose_map: pose_map.clone(), dim: k }),
    )?)?;
    let x = cost.state().clone();
    let report = gauss_newton_step_with(&cost, &x, LinearSolver::Qr, 0.0)?;
    Ok(belief.from_state(&report.mean, report.covariance))
}

/// Measurements of one feature gathered for an update, at a triangulated
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureObservations {
    pub landmark: u64,
    pub position: DVector<f64>,
    /// `(frame, z)` pairs; every frame must be a live clone.
    pub observations: Vec<(usize, DVector<f64>)>,
}

/// Classical update formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateForm {
    /// `Σ̄⁻¹ = Σ⁻¹ + TᵀR₂⁻¹T`; needs an invertible prior covariance.
    Information,
    /// Kalman gain form; valid for singular covariances.
    Covariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullspaceDiagnostics {
    /// Rows left after projecting onto the left nullspace of `H_f`.
    pub projected_dim: usize,
    /// Rows after the QR compression of `AᵀH_x`.
    pub compressed_dim: usize,
    /// `max |AᵀH_f|`.
    pub nullspace_residual: f64,
}

struct Stacked {
    hx: DMatrix<f64>,
    hf: DMatrix<f64>,
    r: DVector<f64>,
    noise: DMatrix<f64>,
}

fn stack(belief: &MsckfBelief, model: &dyn MeasurementModel, feats: &[FeatureObservations]) -> Result<Stacked, EstimatorError> {
    let dz = model.measurement_dim();
    let df = model.feature_dim();
    let m: usize = feats.iter().map(|f| f.observations.len()).sum::<usize>() * dz;
    let d = belief.dim();
    let sv = model.noise_covariance();
    let mut hx = DMatrix::zeros(m, d);
    let mut hf = DMatrix::zeros(m, feats.len() * df);
    let mut r = DVector::zeros(m);
    let mut noise = DMatrix::zeros(m, m);
    let mut row = 0;
    for (j, feat) in feats.iter().enumerate() {
        for (frame, z) in &feat.observations {
            let i = belief
                .clones
                .iter()
                .position(|c| c.frame == *frame)
                .ok_or(FactorError::UnknownBlock(clone_id(*frame)))?;
            let pose = &belief.clones[i].pose;
            let (hp, hfj) = model.jacobians(pose, &feat.position)?;
            hx.view_mut((row, belief.clone_offset(i)), (dz, hp.ncols())).copy_from(&hp);
            hf.view_mut((row, j * df), (dz, df)).copy_from(&hfj);
            r.rows_mut(row, dz).copy_from(&(z - model.predict(pose, &feat.position)?));
            noise.view_mut((row, row), (dz, dz)).copy_from(&sv);
            row += dz;
        }
    }
    Ok(Stacked { hx, hf, r, noise })
}

/// Classical feature update: project onto an orthonormal basis `A` of the
/// left nullspace of `H_f`, compress `AᵀH_x = QT` and update the state.
pub fn feature_update_nullspace(
    belief: &MsckfBelief,
    model: &dyn MeasurementModel,
    feats: &[FeatureObservations],
    form: UpdateForm,
) -> Result<(MsckfBelief, NullspaceDiagnostics), EstimatorError> {
    belief.check()?;
    let s = stack(belief, model, feats)?;
    let (m, k) = s.hf.shape();
    if m <= k {
        return Err(EstimatorError::Configuration("feature nullspace is empty".into()));
    }
    let qr = s.hf.clone().qr();
    let rdiag = qr.r().diagonal();
    let scale = rdiag.amax();
    if rdiag.iter().any(|v| v.abs() <= 1e-12 * scale) {
        return Err(OptimizerError::RankDeficient { blocks: feats.iter().map(|f| feature_id(f.landmark)).collect() }.into());
    }
    let mut qt = DMatrix::identity(m, m);
    qr.q_tr_mul(&mut qt);
    let a = qt.rows(k, m - k).transpose();
    let nullspace_residual = (a.transpose() * &s.hf).amax();

    let ho = a.transpose() * &s.hx;
    let ro = a.transpose() * &s.r;
    let no = a.transpose() * &s.noise * &a;
    let qr2 = ho.qr();
    let q2 = qr2.q();
    let t = qr2.r();
    let r2 = symmetrize(&(q2.transpose() * &no * &q2));
    let res2 = q2.transpose() * ro;
    let sigma = &belief.covariance;

    let r2_inv = r2.clone().cholesky().ok_or(OptimizerError::Singular)?.inverse();
    let (delta, cov) = match form {
        UpdateForm::Information => {
            let info = sigma.clone().cholesky().ok_or(OptimizerError::Singular)?.inverse()
                + t.transpose() * &r2_inv * &t;
            let cov = info.cholesky().ok_or(OptimizerError::Singular)?.inverse();
            let delta = &cov * t.transpose() * &r2_inv * &res2;
            (delta, cov)
        }
        UpdateForm::Covariance => {
            let innov = &t * sigma * t.transpose() + &r2;
            let innov_inv = innov.cholesky().ok_or(OptimizerError::Singular)?.inverse();
            let gain = sigma * t.transpose() * innov_inv;
            let delta = &gain * &res2;
            let ikt = DMatrix::identity(sigma.nrows(), sigma.nrows()) - &gain * &t;
            let cov = &ikt * sigma * ikt.transpose() + &gain * &r2 * gain.transpose();
            (delta, cov)
        }
    };
    let mut out = belief.boxplus(&delta)?;
    out.covariance = symmetrize(&cov);
    let diag = NullspaceDiagnostics { projected_dim: m - k, compressed_dim: t.nrows(), nullspace_residual };
    Ok((out, diag))
}

fn feature_cost(
    belief: &MsckfBelief,
    model: &Arc<dyn MeasurementModel>,
    feats: &[FeatureObservations],
) -> Result<(RunningCost, Vec<BlockId>), EstimatorError> {
    let mut cost = belief.to_gaussian()?.to_cost()?;
    let sqrt_info = sqrt_info_from_covariance(&model.noise_covariance())?;
    let mut ids = Vec::new();
    for feat in feats {
        let fid = feature_id(feat.landmark);
        cost.add_block(fid, BlockKind::Feature, ManifoldPoint::Euclidean(feat.position.clone()))?;
        ids.push(fid);
        for (frame, z) in &feat.observations {
            cost.add_residual(ResidualBlock::new(
                ResidualKind::Measurement { frame: *frame as u64, feature: feat.landmark },
                vec![clone_id(*frame), fid],
                sqrt_info.clone(),
                Arc::new(MeasurementResidual { model: model.clone(), pose_map: Arc::new(IdentityPose), z: z.clone() }),
            )?)?;
        }
    }
    Ok((cost, ids))
}

/// Feature update as marginalization of the features from prior plus their
/// measurement residuals, linearized at `(μ, f*)`.
pub fn feature_update_marginalize(
    belief: &MsckfBelief,
    model: &Arc<dyn MeasurementModel>,
    feats: &[FeatureObservations],
    rcond: f64,
) -> Result<MsckfBelief, EstimatorError> {
    belief.check()?;
    let (mut cost, ids) = feature_cost(belief, model, feats)?;
    let x = cost.state().clone();
    let report = marginalize_with(&mut cost, &x, &ids, MarginalizationScope::All, rcond)?;
    Ok(belief.from_state(&report.mean, report.covariance))
}

/// Iterated variant: Gauss-Newton over state and features first, then
/// marginalize the features at the converged point.
pub fn feature_update_iterated(
    belief: &MsckfBelief,
    model: &Arc<dyn MeasurementModel>,
    feats: &[FeatureObservations],
    opts: &SolveOptions,
    rcond: f64,
) -> Result<(MsckfBelief, usize), EstimatorError> {
    belief.check()?;
    let (mut cost, ids) = feature_cost(belief, model, feats)?;
    let x0 = cost.state().clone();
    let solved = gauss_newton_solve(&cost, &x0, &SolveOptions { solver: LinearSolver::Qr, ..*opts })?;
    let report = marginalize_with(&mut cost, &solved.mean, &ids, MarginalizationScope::All, rcond)?;
    Ok((belief.from_state(&report.mean, report.covariance), solved.iterations))
}

/// Classical propagation: `Σ ← diag(G, I) Σ diag(Gᵀ, I) + diag(Σ_w, 0)`.
pub fn propagate_classical(belief: &MsckfBelief, dynamics: &dyn StepDynamics) -> Result<MsckfBelief, EstimatorError> {
    belief.check()?;
    let d = belief.dim();
    let dp = belief.process.tangent_dim();
    let g = dynamics.jacobian(&belief.process)?;
    let mut phi = DMatrix::identity(d, d);
    phi.view_mut((0, 0), (dp, dp)).copy_from(&g);
    let mut cov = &phi * &belief.covariance * phi.transpose();
    let mut q = cov.view_mut((0, 0), (dp, dp));
    q += dynamics.noise_covariance();
    let mut out = belief.clone();
    out.process = dynamics.propagate(&belief.process)?;
    out.covariance = symmetrize(&cov);
    Ok(out)
}

/// Propagation as marginalization of the old process state from prior plus
/// dynamics residual, linearized at `(μ̄, g(μ̄))`.
pub fn propagate_marginalize(
    belief: &MsckfBelief,
    dynamics: &Arc<dyn StepDynamics>,
    rcond: f64,
) -> Result<MsckfBelief, EstimatorError> {
    belief.check()?;
    let mut cost = belief.to_gaussian()?.to_cost()?;
    cost.add_block(NEXT_PROCESS, belief.process_kind, dynamics.propagate(&belief.process)?)?;
    cost.add_residual(ResidualBlock::new(
        ResidualKind::Dynamics { step: 0 },
        vec![PROCESS, NEXT_PROCESS],
        sqrt_info_from_covariance(dynamics.noise_covariance())?,
        Arc::new(DynamicsResidual { dynamics: dynamics.clone() }),
    )?)?;
    let x = cost.state().clone();
    let report = marginalize_with(&mut cost, &x, &[PROCESS], MarginalizationScope::Touching, rcond)?;
    let mut order = vec![NEXT_PROCESS];
    order.extend(belief.clones.iter().map(|c| clone_id(c.frame)));
    let g = GaussianBelief::new(report.mean, report.covariance)?.select(&order)?;
    Ok(belief.from_state(&g.mean, g.covariance))
}

/// Pose and measurement sets chosen for one update.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SelectedSets {
    /// Frames of the poses to drop.
    pub poses: Vec<usize>,
    /// `(frame, landmark)` pairs at dropped poses whose landmark is seen at
    /// all of them.
    pub common: Vec<(usize, u64)>,
    /// Pairs whose landmark is not seen at the newest pose.
    pub lost: Vec<(usize, u64)>,
    /// Landmarks appearing in either pair set.
    pub features: Vec<u64>,
}

/// Chooses the sets for a window of clones (oldest first) and the recorded
/// `(frame, landmark)` pairs. Once `n ≥ N_max − 1`, every pose with 1-based
/// index `i ≡ 2 (mod 3)` is selected for dropping.
pub fn select_sets<V>(clone_frames: &[usize], pairs: &BTreeMap<(usize, u64), V>, max_poses: usize) -> SelectedSets {
    let n = clone_frames.len();
    let mut sets = SelectedSets::default();
    if n + 1 >= max_poses {
        sets.poses = (1..=n).filter(|i| i % 3 == 2).map(|i| clone_frames[i - 1]).collect();
    }
    let mut seen: BTreeMap<u64, BTreeSet<usize>> = BTreeMap::new();
    for &(frame, l) in pairs.keys() {
        seen.entry(l).or_default().insert(frame);
    }
    if !sets.poses.is_empty() {
        sets.common = pairs
            .keys()
            .filter(|(frame, l)| sets.poses.contains(frame) && sets.poses.iter().all(|p| seen[l].contains(p)))
            .copied()
            .collect();
    }
    if let Some(&newest) = clone_frames.last() {
        sets.lost = pairs
            .keys()
            .filter(|(frame, l)| clone_frames.contains(frame) && !seen[l].contains(&newest))
            .copied()
            .collect();
    }
    let features: BTreeSet<u64> = sets.common.iter().chain(&sets.lost).map(|&(_, l)| l).collect();
    sets.features = features.into_iter().collect();
    sets
}

/// Cutoff used by the optimization form, whose prior carries the `1/ε`
/// pose-link information.
const OPT_RCOND: f64 = 1e-24;

/// MSCKF run. The classical form uses the analytic augmentation and the
/// covariance-form nullspace update; the optimization form uses the
/// `ε`-regularized augmentation and marginalizes features and process states.
pub fn msckf_run(problem: &Problem, schedule: &EstimatorSchedule) -> Result<RunOutput, EstimatorError> {
    schedule.validate()?;
    let iterated = schedule.kind == EstimatorKind::IteratedMsckf;
    let classical = schedule.form == Form::Classical && !iterated;
    let sensor = &problem.sensor;
    let mut belief =
        MsckfBelief::new(problem.prior_mean.clone(), sensor.process_kind, problem.prior_covariance.clone());
    let mut pairs: BTreeMap<(usize, u64), DVector<f64>> = BTreeMap::new();
    let mut consumed: BTreeSet<(usize, u64)> = BTreeSet::new();
    let mut stats = RunStats::default();
    let mut estimates = Vec::with_capacity(problem.frames.len());
    let opts = SolveOptions {
        max_iterations: schedule.gn_iters,
        step_tolerance: schedule.step_tolerance,
        ..SolveOptions::default()
    };

    for frame in &problem.frames {
        let fail = |e: EstimatorError| match e {
            EstimatorError::Optimizer(OptimizerError::Divergence(reason)) => {
                EstimatorError::Divergence { frame: frame.index, reason }
            }
            other => other,
        };
        if let Some(tr) = &frame.transition {
            let dynamics = tr.at(&belief.process)?;
            belief = if classical {
                propagate_classical(&belief, dynamics.as_ref())
            } else {
                stats.marginalizations += 1;
                propagate_marginalize(&belief, &dynamics, OPT_RCOND)
            }
            .map_err(fail)?;
        }
        belief = if classical {
            pose_augment(&belief, frame.index, sensor.pose_map.as_ref())?
        } else {
            pose_augment_epsilon(&belief, frame.index, &sensor.pose_map, schedule.augment_epsilon).map_err(fail)?
        };
        stats.peak_window = stats.peak_window.max(belief.clones.len());
        for o in &frame.observations {
            pairs.entry((frame.index, o.landmark)).or_insert_with(|| o.z.clone());
        }

        let frames = belief.clone_frames();
        let sets = select_sets(&frames, &pairs, schedule.max_poses);
        let used: BTreeSet<(usize, u64)> = sets.common.iter().chain(&sets.lost).copied().collect();
        let mut feats = Vec::new();
        for &l in &sets.features {
            let observations: Vec<(usize, DVector<f64>)> =
                used.iter().filter(|p| p.1 == l).map(|p| (p.0, pairs[p].clone())).collect();
            if observations.len() < 2 {
                debug!("landmark {l}: {} observation(s) at processing time, dropped", observations.len());
                stats.features_dropped += 1;
                continue;
            }
            let all: Vec<(&ManifoldPoint, &DVector<f64>)> = pairs
                .iter()
                .filter(|((_, pl), _)| *pl == l)
                .filter_map(|((f, _), z)| belief.clones.iter().find(|c| c.frame == *f).map(|c| (&c.pose, z)))
                .collect();
            let poses: Vec<&ManifoldPoint> = all.iter().map(|p| p.0).collect();
            let zs: Vec<&DVector<f64>> = all.iter().map(|p| p.1).collect();
            match triangulate(sensor.measurement.as_ref(), &poses, &zs) {
                Ok(position) => feats.push(FeatureObservations { landmark: l, position, observations }),
                Err(e) => {
                    debug!("landmark {l}: {e}, dropped");
                    stats.features_dropped += 1;
                }
            }
        }
        if !feats.is_empty() {
            belief = if iterated {
                let (b, iters) = feature_update_iterated(&belief, &sensor.measurement, &feats, &opts, OPT_RCOND)
                    .map_err(fail)?;
                stats.gn_iterations += iters;
                b
            } else if classical {
                feature_update_nullspace(&belief, sensor.measurement.as_ref(), &feats, UpdateForm::Covariance)
                    .map_err(fail)?
                    .0
            } else {
                stats.gn_iterations += 1;
                feature_update_marginalize(&belief, &sensor.measurement, &feats, OPT_RCOND).map_err(fail)?
            };
            stats.features_processed += feats.len();
            if !classical {
                stats.marginalizations += 1;
            }
        }
        for p in &used {
            pairs.remove(p);
            debug_assert!(consumed.insert(*p), "pair {p:?} processed twice");
        }
        pairs.retain(|(f, _), _| !sets.poses.contains(f));
        belief = belief.drop_clones(&sets.poses);
        if belief.covariance.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::Divergence { frame: frame.index, reason: "non-finite covariance".into() });
        }
        if !belief.process.is_finite() {
            return Err(EstimatorError::Divergence { frame: frame.index, reason: "non-finite mean".into() });
        }
        estimates.push((frame.t, belief.process.clone()));
    }
    Ok(RunOutput { estimates, stats })
}

/// Default cutoff re-exported for callers building their own instances.
pub const DEFAULT_RCOND: f64 = PINV_RCOND;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::models::PlanarTranslation;

    #[test]
    fn nine_poses_with_bound_ten_select_every_third() {
        let frames: Vec<usize> = (1..=9).collect();
        let mut pairs = BTreeMap::new();
        for f in 1..=9 {
            pairs.insert((f, 0u64), ());
        }
        let sets = select_sets(&frames, &pairs, 10);
        assert_eq!(sets.poses, vec![2, 5, 8]);
        assert_eq!(sets.common, vec![(2, 0), (5, 0), (8, 0)]);
        assert!(sets.lost.is_empty());
    }

    #[test]
    fn small_window_with_visible_features_selects_nothing() {
        let frames = vec![1, 2, 3];
        let pairs: BTreeMap<_, _> = [((1, 0u64), ()), ((3, 0), ())].into_iter().collect();
        assert_eq!(select_sets(&frames, &pairs, 10), SelectedSets::default());
    }

    #[test]
    fn feature_lost_at_newest_pose_is_selected() {
        let frames = vec![1, 2, 3];
        let pairs: BTreeMap<_, _> = [((1, 4u64), ()), ((2, 4), ()), ((3, 5), ())].into_iter().collect();
        let sets = select_sets(&frames, &pairs, 10);
        assert_eq!(sets.lost, vec![(1, 4), (2, 4)]);
        assert_eq!(sets.features, vec![4]);
    }

    #[test]
    fn one_feature_two_planar_poses() {
        let model: Arc<dyn MeasurementModel> = Arc::new(PlanarTranslation::isotropic(0.2));
        let mut b = MsckfBelief::new(ManifoldPoint::euclidean(&[0.0, 0.0, 0.1]), BlockKind::Pose, DMatrix::zeros(3, 3));
        b.clones.push(ClonedPose { frame: 0, pose: ManifoldPoint::euclidean(&[0.0, 0.0, 0.1]) });
        b.clones.push(ClonedPose { frame: 1, pose: ManifoldPoint::euclidean(&[1.0, 0.2, 0.2]) });
        let a = DMatrix::from_fn(9, 9, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.05);
        b.covariance = &a * a.transpose() + DMatrix::identity(9, 9) * 0.1;
        let feat = FeatureObservations {
            landmark: 3,
            position: DVector::from_vec(vec![2.0, 1.0]),
            observations: vec![(0, DVector::from_vec(vec![2.1, 0.9])), (1, DVector::from_vec(vec![1.0, 0.85]))],
        };
        let (c, diag) = feature_update_nullspace(&b, model.as_ref(), &[feat.clone()], UpdateForm::Information).unwrap();
        assert_eq!(diag.projected_dim, 2);
        assert!(diag.nullspace_residual < 1e-10);
        let (k, _) = feature_update_nullspace(&b, model.as_ref(), &[feat.clone()], UpdateForm::Covariance).unwrap();
        let o = feature_update_marginalize(&b, &model, &[feat], DEFAULT_RCOND).unwrap();
        let (sc, so) = (c.to_state().unwrap(), o.to_state().unwrap());
        assert!(sc.boxminus(&so).unwrap().norm() < 1e-8);
        assert!((&c.covariance - &o.covariance).norm() / c.covariance.norm() < 1e-8);
        assert!((&k.covariance - &c.covariance).norm() / c.covariance.norm() < 1e-8);
    }

    #[test]
    fn identity_map_clones_the_process_block() {
        let b = MsckfBelief::new(
            ManifoldPoint::euclidean(&[1.0, 2.0, 0.5]),
            BlockKind::Pose,
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])),
        );
        let a = pose_augment(&b, 0, &IdentityPose).unwrap();
        assert_eq!(a.clones[0].pose, b.process);
        assert_eq!(a.covariance.view((3, 3), (3, 3)).into_owned(), b.covariance);
        assert!(a.covariance.symmetric_eigenvalues().min() > -1e-12);
    }
}
