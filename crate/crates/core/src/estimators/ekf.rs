//! EKF SLAM on a Euclidean state `(x, f₁, …, f_p)`: the classical
//! augmentation, update and propagation formulas next to their Gauss-Newton
//! and marginalization counterparts.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{EstimatorError, EstimatorKind, EstimatorSchedule, Form, Problem, RunOutput, RunStats};
use crate::factors::models::{IdentityPose, MeasurementModel, StepDynamics};
use crate::factors::{
    BlockId, BlockKind, DynamicsResidual, FactorError, FullState, GaussianBelief, MeasurementResidual,
    ResidualBlock, ResidualKind, RunningCost,
};
use crate::manifold::ManifoldPoint;
use crate::optimizer::{
    gauss_newton_solve, gauss_newton_step, marginalize, symmetrize, MarginalizationScope, SolveOptions,
};

const POSE: BlockId = BlockId(0);
const NEXT_POSE: BlockId = BlockId(1);

fn feature_id(slot: usize) -> BlockId {
    BlockId(2 + slot as u64)
}

/// Mean and covariance over `(x, f₁, …, f_p)`, with the landmark id of each
/// feature slot.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub pose_dim: usize,
    pub feature_dim: usize,
    pub landmarks: Vec<u64>,
}

impl EkfBelief {
    pub fn new(pose: DVector<f64>, covariance: DMatrix<f64>, feature_dim: usize) -> Self {
        let pose_dim = pose.len();
        Self { mean: pose, covariance, pose_dim, feature_dim, landmarks: Vec::new() }
    }

    pub fn feature_count(&self) -> usize {
        self.landmarks.len()
    }

    pub fn pose(&self) -> DVector<f64> {
        self.mean.rows(0, self.pose_dim).into_owned()
    }

    pub fn pose_point(&self) -> ManifoldPoint {
        ManifoldPoint::Euclidean(self.pose())
    }

    pub fn feature(&self, slot: usize) -> DVector<f64> {
        self.mean.rows(self.pose_dim + slot * self.feature_dim, self.feature_dim).into_owned()
    }

    pub fn slot_of(&self, landmark: u64) -> Option<usize> {
        self.landmarks.iter().position(|&l| l == landmark)
    }

    fn check(&self) -> Result<(), EstimatorError> {
        let d = self.pose_dim + self.feature_count() * self.feature_dim;
        if self.mean.len() != d || self.covariance.nrows() != d || self.covariance.ncols() != d {
            return Err(FactorError::Dimension { what: "EKF belief", expected: d, got: self.mean.len() }.into());
        }
        Ok(())
    }

    /// Block state `POSE, f₁, …` matching this belief's coordinates.
    pub fn to_state(&self) -> Result<FullState, FactorError> {
        let mut s = FullState::new();
        s.insert(POSE, BlockKind::Pose, self.pose_point())?;
        for slot in 0..self.feature_count() {
            s.insert(feature_id(slot), BlockKind::Feature, ManifoldPoint::Euclidean(self.feature(slot)))?;
        }
        Ok(s)
    }

    pub fn to_gaussian(&self) -> Result<GaussianBelief, FactorError> {
        GaussianBelief::new(self.to_state()?, self.covariance.clone())
    }

    fn from_state(state: &FullState, covariance: DMatrix<f64>, template: &Self, landmarks: Vec<u64>) -> Self {
        let mut mean = DVector::zeros(state.dim());
        let mut off = 0;
        for b in state.blocks() {
            let v = b.value.as_euclidean().expect("EKF blocks are Euclidean");
            mean.rows_mut(off, v.len()).copy_from(v);
            off += v.len();
        }
        Self {
            mean,
            covariance: symmetrize(&covariance),
            pose_dim: template.pose_dim,
            feature_dim: template.feature_dim,
            landmarks,
        }
    }
}

fn measurement(
    model: &Arc<dyn MeasurementModel>,
    frame: u64,
    landmark: u64,
    slot: usize,
    z: &DVector<f64>,
) -> Result<ResidualBlock, FactorError> {
    let sqrt_info = crate::factors::sqrt_info_from_covariance(&model.noise_covariance())?;
    ResidualBlock::new(
        ResidualKind::Measurement { frame, feature: landmark },
        vec![POSE, feature_id(slot)],
        sqrt_info,
        Arc::new(MeasurementResidual { model: model.clone(), pose_map: Arc::new(IdentityPose), z: z.clone() }),
    )
}

fn inverse(model: &dyn MeasurementModel, pose: &ManifoldPoint, z: &DVector<f64>) -> Result<DVector<f64>, EstimatorError> {
    model
        .inverse(pose, z)
        .ok_or_else(|| EstimatorError::Configuration("EKF augmentation needs an invertible measurement model".into()))?
        .map_err(Into::into)
}

/// Classical feature augmentation: append `ℓ(μ_x, z)` per new landmark and
/// extend the covariance with `L_x`, `L_z`.
pub fn augment_classical(
    belief: &EkfBelief,
    model: &dyn MeasurementModel,
    new: &[(u64, DVector<f64>)],
) -> Result<EkfBelief, EstimatorError> {
    belief.check()?;
    if new.is_empty() {
        return Ok(belief.clone());
    }
    let (dx, df) = (belief.pose_dim, belief.feature_dim);
    let d = belief.mean.len();
    let k = new.len();
    let pose = belief.pose_point();
    let sv = model.noise_covariance();
    let mut lx = DMatrix::zeros(k * df, dx);
    let mut lz_sv_lz = DMatrix::zeros(k * df, k * df);
    let mut feats = DVector::zeros(k * df);
    for (i, (_, z)) in new.iter().enumerate() {
        feats.rows_mut(i * df, df).copy_from(&inverse(model, &pose, z)?);
        let (jx, jz) = model.inverse_jacobians(&pose, z).expect("invertible model")?;
        lx.view_mut((i * df, 0), (df, dx)).copy_from(&jx);
        lz_sv_lz.view_mut((i * df, i * df), (df, df)).copy_from(&(&jz * &sv * jz.transpose()));
    }
    let sigma = &belief.covariance;
    let sx_all = sigma.rows(0, dx); // [Σ_xx Σ_xf]
    let cross = &lx * sx_all; // [L_x Σ_xx, L_x Σ_xf]
    let sxx = sigma.view((0, 0), (dx, dx));
    let corner = &lx * sxx * lx.transpose() + lz_sv_lz;

    let mut cov = DMatrix::zeros(d + k * df, d + k * df);
    cov.view_mut((0, 0), (d, d)).copy_from(sigma);
    cov.view_mut((d, 0), (k * df, d)).copy_from(&cross);
    cov.view_mut((0, d), (d, k * df)).copy_from(&cross.transpose());
    cov.view_mut((d, d), (k * df, k * df)).copy_from(&corner);
    let mut mean = DVector::zeros(d + k * df);
    mean.rows_mut(0, d).copy_from(&belief.mean);
    mean.rows_mut(d, k * df).copy_from(&feats);
    let mut landmarks = belief.landmarks.clone();
    landmarks.extend(new.iter().map(|(l, _)| *l));
    Ok(EkfBelief { mean, covariance: symmetrize(&cov), pose_dim: dx, feature_dim: df, landmarks })
}

/// Prior plus new-landmark measurement residuals, linearized at
/// `(μ, ℓ(μ_x, z…))`. Returns the cost and its linearization point.
fn augmented_cost(
    belief: &EkfBelief,
    model: &Arc<dyn MeasurementModel>,
    new: &[(u64, DVector<f64>)],
    frame: u64,
) -> Result<(RunningCost, FullState, Vec<u64>), EstimatorError> {
    let mut cost = belief.to_gaussian()?.to_cost()?;
    let pose = belief.pose_point();
    let mut landmarks = belief.landmarks.clone();
    for (l, z) in new {
        let slot = landmarks.len();
        let f = inverse(model.as_ref(), &pose, z)?;
        cost.add_block(feature_id(slot), BlockKind::Feature, ManifoldPoint::Euclidean(f))?;
        cost.add_residual(measurement(model, frame, *l, slot, z)?)?;
        landmarks.push(*l);
    }
    let x = cost.state().clone();
    Ok((cost, x, landmarks))
}

/// Feature augmentation as one Gauss-Newton step on prior plus the new
/// measurement residuals.
pub fn augment_opt(
    belief: &EkfBelief,
    model: &Arc<dyn MeasurementModel>,
    new: &[(u64, DVector<f64>)],
) -> Result<EkfBelief, EstimatorError> {
    belief.check()?;
    if new.is_empty() {
        return Ok(belief.clone());
    }
    let (cost, x, landmarks) = augmented_cost(belief, model, new, 0)?;
    let report = gauss_newton_step(&cost, &x)?;
    Ok(EkfBelief::from_state(&report.mean, report.covariance, belief, landmarks))
}

fn stacked_measurements(
    belief: &EkfBelief,
    model: &dyn MeasurementModel,
    obs: &[(usize, DVector<f64>)],
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>), EstimatorError> {
    let (dx, df) = (belief.pose_dim, belief.feature_dim);
    let dz = model.measurement_dim();
    let d = belief.mean.len();
    let pose = belief.pose_point();
    let sv = model.noise_covariance();
    let mut h = DMatrix::zeros(obs.len() * dz, d);
    let mut innov = DVector::zeros(obs.len() * dz);
    let mut r = DMatrix::zeros(obs.len() * dz, obs.len() * dz);
    for (i, (slot, z)) in obs.iter().enumerate() {
        let f = belief.feature(*slot);
        let (hp, hf) = model.jacobians(&pose, &f)?;
        h.view_mut((i * dz, 0), (dz, dx)).copy_from(&hp);
        h.view_mut((i * dz, dx + slot * df), (dz, df)).copy_from(&hf);
        innov.rows_mut(i * dz, dz).copy_from(&(z - model.predict(&pose, &f)?));
        r.view_mut((i * dz, i * dz), (dz, dz)).copy_from(&sv);
    }
    Ok((h, innov, r))
}

/// Classical Kalman update with measurements of landmarks already in the
/// state, given as `(slot, z)`.
pub fn update_classical(
    belief: &EkfBelief,
    model: &dyn MeasurementModel,
    obs: &[(usize, DVector<f64>)],
) -> Result<EkfBelief, EstimatorError> {
    belief.check()?;
    if obs.is_empty() {
        return Ok(belief.clone());
    }
    let (h, innov, r) = stacked_measurements(belief, model, obs)?;
    let sigma = &belief.covariance;
    let s = &h * sigma * h.transpose() + r;
    let s_inv = s
        .clone()
        .cholesky()
        .ok_or(crate::optimizer::OptimizerError::Singular)?
        .inverse();
    let k = sigma * h.transpose() * s_inv;
    let mean = &belief.mean + &k * innov;
    let cov = sigma - &k * &h * sigma;
    Ok(EkfBelief { mean, covariance: symmetrize(&cov), ..belief.clone() })
}

fn update_cost(
    belief: &EkfBelief,
    model: &Arc<dyn MeasurementModel>,
    obs: &[(usize, DVector<f64>)],
) -> Result<(RunningCost, FullState), EstimatorError> {
    let mut cost = belief.to_gaussian()?.to_cost()?;
    for (slot, z) in obs {
        cost.add_residual(measurement(model, 0, belief.landmarks[*slot], *slot, z)?)?;
    }
    let x = cost.state().clone();
    Ok((cost, x))
}

/// Feature update as one Gauss-Newton step on prior plus measurements.
pub fn update_opt(
    belief: &EkfBelief,
    model: &Arc<dyn MeasurementModel>,
    obs: &[(usize, DVector<f64>)],
) -> Result<EkfBelief, EstimatorError> {
    belief.check()?;
    if obs.is_empty() {
        return Ok(belief.clone());
    }
    let (cost, x) = update_cost(belief, model, obs)?;
    let report = gauss_newton_step(&cost, &x)?;
    Ok(EkfBelief::from_state(&report.mean, report.covariance, belief, belief.landmarks.clone()))
}

/// Classical propagation: `μ_x ← g(μ_x)`, `Σ_xx ← GΣ_xxGᵀ + Σ_w`,
/// `Σ_xf ← GΣ_xf`.
pub fn propagate_classical(belief: &EkfBelief, dynamics: &dyn StepDynamics) -> Result<EkfBelief, EstimatorError> {
    belief.check()?;
    let dx = belief.pose_dim;
    let d = belief.mean.len();
    let pose = belief.pose_point();
    let g = dynamics.jacobian(&pose)?;
    let next = dynamics.propagate(&pose)?;
    let mut phi = DMatrix::identity(d, d);
    phi.view_mut((0, 0), (dx, dx)).copy_from(&g);
    let mut cov = &phi * &belief.covariance * phi.transpose();
    let mut q = cov.view_mut((0, 0), (dx, dx));
    q += dynamics.noise_covariance();
    let mut mean = belief.mean.clone();
    mean.rows_mut(0, dx).copy_from(next.as_euclidean().expect("Euclidean pose"));
    Ok(EkfBelief { mean, covariance: symmetrize(&cov), ..belief.clone() })
}

/// Propagation as marginalization of `x_t` from prior plus dynamics residual,
/// linearized at `(μ̄_t, g(μ̄_t))`.
pub fn propagate_opt(belief: &EkfBelief, dynamics: &Arc<dyn StepDynamics>) -> Result<EkfBelief, EstimatorError> {
    belief.check()?;
    let mut cost = belief.to_gaussian()?.to_cost()?;
    let next = dynamics.propagate(&belief.pose_point())?;
    cost.add_block(NEXT_POSE, BlockKind::Pose, next)?;
    let sqrt_info = crate::factors::sqrt_info_from_covariance(dynamics.noise_covariance())?;
    cost.add_residual(ResidualBlock::new(
        ResidualKind::Dynamics { step: 0 },
        vec![POSE, NEXT_POSE],
        sqrt_info,
        Arc::new(DynamicsResidual { dynamics: dynamics.clone() }),
    )?)?;
    let x = cost.state().clone();
    let report = marginalize(&mut cost, &x, &[POSE], MarginalizationScope::Touching)?;
    let mut order = vec![NEXT_POSE];
    order.extend((0..belief.feature_count()).map(feature_id));
    let g = GaussianBelief::new(report.mean, report.covariance)?.select(&order)?;
    Ok(EkfBelief::from_state(&g.mean, g.covariance, belief, belief.landmarks.clone()))
}

/// Iterated update: Gauss-Newton to convergence on prior, new-landmark and
/// existing-landmark residuals together.
pub fn iterated_update(
    belief: &EkfBelief,
    model: &Arc<dyn MeasurementModel>,
    new: &[(u64, DVector<f64>)],
    obs: &[(usize, DVector<f64>)],
    opts: &SolveOptions,
) -> Result<(EkfBelief, usize), EstimatorError> {
    belief.check()?;
    let (mut cost, x, landmarks) = augmented_cost(belief, model, new, 0)?;
    for (slot, z) in obs {
        cost.add_residual(measurement(model, 0, belief.landmarks[*slot], *slot, z)?)?;
    }
    let report = gauss_newton_solve(&cost, &x, opts)?;
    Ok((EkfBelief::from_state(&report.mean, report.covariance, belief, landmarks), report.iterations))
}

/// EKF or iEKF over a planar problem with a Euclidean process state.
pub fn ekf_run(problem: &Problem, schedule: &EstimatorSchedule) -> Result<RunOutput, EstimatorError> {
    schedule.validate()?;
    let model = problem.sensor.measurement.clone();
    let pose = problem
        .prior_mean
        .as_euclidean()
        .ok_or_else(|| EstimatorError::Configuration("EKF needs a Euclidean process state".into()))?
        .clone();
    let iterated = schedule.kind == EstimatorKind::IteratedEkf;
    let classical = schedule.form == Form::Classical && !iterated;
    let mut belief = EkfBelief::new(pose, problem.prior_covariance.clone(), model.feature_dim());
    let mut stats = RunStats { peak_window: 1, ..RunStats::default() };
    let mut estimates = Vec::with_capacity(problem.frames.len());
    let opts = SolveOptions {
        max_iterations: schedule.gn_iters,
        step_tolerance: schedule.step_tolerance,
        ..SolveOptions::default()
    };

    for frame in &problem.frames {
        let fail = |e: EstimatorError| match e {
            EstimatorError::Optimizer(crate::optimizer::OptimizerError::Divergence(reason)) => {
                EstimatorError::Divergence { frame: frame.index, reason }
            }
            other => other,
        };
        if let Some(tr) = &frame.transition {
            let dynamics = tr.at(&belief.pose_point())?;
            belief = if classical {
                propagate_classical(&belief, dynamics.as_ref())
            } else {
                stats.marginalizations += 1;
                propagate_opt(&belief, &dynamics)
            }
            .map_err(fail)?;
        }
        // Duplicate landmark ids within a frame keep the first observation.
        let mut seen = BTreeMap::new();
        for o in &frame.observations {
            seen.entry(o.landmark).or_insert(&o.z);
        }
        let mut new = Vec::new();
        let mut existing = Vec::new();
        for (&l, &z) in &seen {
            match belief.slot_of(l) {
                Some(slot) => existing.push((slot, z.clone())),
                None => new.push((l, z.clone())),
            }
        }
        if iterated {
            let (b, iters) = iterated_update(&belief, &model, &new, &existing, &opts).map_err(fail)?;
            belief = b;
            stats.gn_iterations += iters;
        } else if classical {
            belief = augment_classical(&belief, model.as_ref(), &new)?;
            belief = update_classical(&belief, model.as_ref(), &existing)?;
        } else {
            if !new.is_empty() {
                belief = augment_opt(&belief, &model, &new).map_err(fail)?;
                stats.gn_iterations += 1;
            }
            if !existing.is_empty() {
                belief = update_opt(&belief, &model, &existing).map_err(fail)?;
                stats.gn_iterations += 1;
            }
        }
        if belief.mean.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::Divergence { frame: frame.index, reason: "non-finite mean".into() });
        }
        estimates.push((frame.t, belief.pose_point()));
    }
    Ok(RunOutput { estimates, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::models::{PlanarTranslation, Unicycle};

    fn scalar_model() -> Arc<dyn MeasurementModel> {
        Arc::new(PlanarTranslation::isotropic(1.0))
    }

    #[test]
    fn scalar_kalman_update() {
        // Exact pose, Σ_f = I, Σ_v = I: each axis is the scalar case.
        let mut b = EkfBelief::new(DVector::from_vec(vec![0.0, 0.0, 0.0]), DMatrix::zeros(3, 3), 2);
        b.mean = DVector::from_vec(vec![0.0, 0.0, 0.0, 5.0, 5.0]);
        b.covariance = DMatrix::zeros(5, 5);
        b.covariance[(3, 3)] = 1.0;
        b.covariance[(4, 4)] = 1.0;
        b.landmarks = vec![7];
        // h = f − p = (5, 5); z − h = (2, 2).
        let z = DVector::from_vec(vec![7.0, 7.0]);
        let out = update_classical(&b, scalar_model().as_ref(), &[(0, z)]).unwrap();
        assert!((out.mean[3] - 6.0).abs() < 1e-12);
        assert!((out.covariance[(3, 3)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn propagation_with_gain_two() {
        #[derive(Debug)]
        struct Double(DMatrix<f64>);
        impl StepDynamics for Double {
            fn propagate(&self, x: &ManifoldPoint) -> Result<ManifoldPoint, FactorError> {
                Ok(ManifoldPoint::Euclidean(x.as_euclidean().unwrap() * 2.0))
            }
            fn jacobian(&self, _x: &ManifoldPoint) -> Result<DMatrix<f64>, FactorError> {
                Ok(DMatrix::identity(1, 1) * 2.0)
            }
            fn noise_covariance(&self) -> &DMatrix<f64> {
                &self.0
            }
        }
        let b = EkfBelief::new(DVector::from_vec(vec![1.5]), DMatrix::identity(1, 1), 2);
        let dynamics: Arc<dyn StepDynamics> = Arc::new(Double(DMatrix::identity(1, 1)));
        let c = propagate_classical(&b, dynamics.as_ref()).unwrap();
        assert!((c.covariance[(0, 0)] - 5.0).abs() < 1e-12);
        assert!((c.mean[0] - 3.0).abs() < 1e-12);
        let o = propagate_opt(&b, &dynamics).unwrap();
        assert!((o.covariance[(0, 0)] - 5.0).abs() < 1e-10);
        assert!((o.mean[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn augmentation_with_unit_pose_covariance() {
        let sv: f64 = 0.25;
        let model: Arc<dyn MeasurementModel> = Arc::new(PlanarTranslation::isotropic(sv.sqrt()));
        let b = EkfBelief::new(DVector::from_vec(vec![1.0, 2.0, 0.3]), DMatrix::identity(3, 3), 2);
        let z = DVector::from_vec(vec![3.0, -1.0]);
        let c = augment_classical(&b, model.as_ref(), &[(4, z.clone())]).unwrap();
        let block = c.covariance.view((3, 3), (2, 2)).into_owned();
        assert!((block - DMatrix::identity(2, 2) * (1.0 + sv)).norm() < 1e-12);
        assert_eq!(c.feature(0), DVector::from_vec(vec![4.0, 1.0]));
        let o = augment_opt(&b, &model, &[(4, z)]).unwrap();
        assert!((&o.covariance - &c.covariance).norm() < 1e-9);
        assert!((&o.mean - &c.mean).norm() < 1e-12);
    }

    #[test]
    fn zero_innovation_keeps_mean_and_shrinks_covariance() {
        let model = scalar_model();
        let b = EkfBelief::new(DVector::from_vec(vec![0.0, 0.0, 0.0]), DMatrix::identity(3, 3), 2);
        let b = augment_classical(&b, model.as_ref(), &[(1, DVector::from_vec(vec![1.0, 1.0]))]).unwrap();
        let z = model.predict(&b.pose_point(), &b.feature(0)).unwrap();
        let u = update_classical(&b, model.as_ref(), &[(0, z)]).unwrap();
        assert!((&u.mean - &b.mean).norm() < 1e-14);
        let diff = &b.covariance - &u.covariance;
        assert!(diff.symmetric_eigenvalues().min() > -1e-10);
    }

    #[test]
    fn classical_and_opt_propagation_match_for_unicycle() {
        let dynamics: Arc<dyn StepDynamics> =
            Arc::new(Unicycle { v: 1.0, omega: 0.3, dt: 0.1, noise: DMatrix::identity(3, 3) * 1e-3 });
        let model = scalar_model();
        let b = EkfBelief::new(DVector::from_vec(vec![0.5, -0.2, 0.7]), DMatrix::identity(3, 3) * 0.1, 2);
        let b = augment_classical(&b, model.as_ref(), &[(1, DVector::from_vec(vec![1.0, 2.0]))]).unwrap();
        let c = propagate_classical(&b, dynamics.as_ref()).unwrap();
        let o = propagate_opt(&b, &dynamics).unwrap();
        assert!((&c.mean - &o.mean).norm() < 1e-10);
        assert!((&c.covariance - &o.covariance).norm() / c.covariance.norm() < 1e-9);
    }
}
