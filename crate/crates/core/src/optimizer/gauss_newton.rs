use nalgebra::{DMatrix, DVector};

use super::{svd_solve, symmetrize, OptimizerError, PINV_RCOND};
use crate::factors::{FullState, RunningCost};

/// How the normal equations are solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearSolver {
    /// SVD pseudoinverse, dropping eigenvalues of `JᵀJ` below `rcond·λ_max`.
    Pseudoinverse { rcond: f64 },
    /// Thin QR of `J`; requires full column rank but never truncates.
    Qr,
}

impl Default for LinearSolver {
    fn default() -> Self {
        Self::Pseudoinverse { rcond: PINV_RCOND }
    }
}

#[derive(Debug, Clone)]
pub struct GaussNewtonReport {
    pub mean: FullState,
    pub covariance: DMatrix<f64>,
    pub step: DVector<f64>,
    /// `‖C(x*)‖²` at the linearization point.
    pub cost: f64,
    /// `‖JᵀC‖` at the linearization point.
    pub gradient_norm: f64,
    pub rank: usize,
}

pub fn gauss_newton_step(cost: &RunningCost, x: &FullState) -> Result<GaussNewtonReport, OptimizerError> {
    gauss_newton_step_with(cost, x, LinearSolver::default(), 0.0)
}

/// One step with an explicit solver and Levenberg damping `λ` (0 for plain
/// Gauss-Newton). The covariance is always the undamped `(JᵀJ)⁺`.
pub fn gauss_newton_step_with(
    cost: &RunningCost,
    x: &FullState,
    solver: LinearSolver,
    lambda: f64,
) -> Result<GaussNewtonReport, OptimizerError> {
    let lin = cost.linearize(x)?;
    let value = lin.c.norm_squared();
    if !value.is_finite() {
        return Err(OptimizerError::Divergence("non-finite residual".into()));
    }
    let gradient_norm = (lin.j.transpose() * &lin.c).norm();
    let n = lin.j.ncols();
    let (step, covariance, rank) = match solver {
        LinearSolver::Pseudoinverse { rcond } => {
            let base = svd_solve(&lin.j, &lin.c, rcond);
            if lambda > 0.0 {
                let (j, c) = damped(&lin.j, &lin.c, lambda);
                let damped = svd_solve(&j, &c, rcond);
                (damped.delta, base.covariance, base.rank)
            } else {
                (base.delta, base.covariance, base.rank)
            }
        }
        LinearSolver::Qr => {
            let (j, c) = if lambda > 0.0 { damped(&lin.j, &lin.c, lambda) } else { (lin.j.clone(), lin.c.clone()) };
            let (delta, _) = qr_solve(&j, &c)?;
            let (_, cov) = qr_solve(&lin.j, &lin.c)?;
            (delta, cov, n)
        }
    };
    let mean = x.boxplus(&step)?;
    Ok(GaussNewtonReport { mean, covariance, step, cost: value, gradient_norm, rank })
}

fn damped(j: &DMatrix<f64>, c: &DVector<f64>, lambda: f64) -> (DMatrix<f64>, DVector<f64>) {
    let (m, n) = j.shape();
    let mut ja = DMatrix::zeros(m + n, n);
    ja.view_mut((0, 0), (m, n)).copy_from(j);
    ja.view_mut((m, 0), (n, n)).fill_diagonal(lambda.sqrt());
    let mut ca = DVector::zeros(m + n);
    ca.rows_mut(0, m).copy_from(c);
    (ja, ca)
}

fn qr_solve(j: &DMatrix<f64>, c: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), OptimizerError> {
    let (m, n) = j.shape();
    if m < n {
        return Err(OptimizerError::Singular);
    }
    let qr = j.clone().qr();
    let r = qr.r();
    let qtc = qr.q().transpose() * c;
    let delta = -r.solve_upper_triangular(&qtc).ok_or(OptimizerError::Singular)?;
    let rinv = r.solve_upper_triangular(&DMatrix::identity(n, n)).ok_or(OptimizerError::Singular)?;
    Ok((delta, symmetrize(&(&rinv * rinv.transpose()))))
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Stop once the step's infinity norm drops below this.
    pub step_tolerance: f64,
    pub levenberg: bool,
    pub solver: LinearSolver,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iterations: 10, step_tolerance: 1e-10, levenberg: false, solver: LinearSolver::default() }
    }
}

impl SolveOptions {
    pub fn fixed(iterations: usize) -> Self {
        Self { max_iterations: iterations, step_tolerance: 0.0, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub mean: FullState,
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Cost at the start and after every accepted step.
    pub costs: Vec<f64>,
}

/// Repeated Gauss-Newton steps from `x0`.
pub fn gauss_newton_solve(cost: &RunningCost, x0: &FullState, opts: &SolveOptions) -> Result<SolveReport, OptimizerError> {
    let mut x = x0.clone();
    let mut current = cost.cost(&x)?;
    let mut costs = vec![current];
    let mut covariance = DMatrix::zeros(x.dim(), x.dim());
    let mut lambda = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut attempts = 0;
    while iterations < opts.max_iterations {
        attempts += 1;
        if attempts > 4 * opts.max_iterations + 20 {
            break;
        }
        let report = gauss_newton_step_with(cost, &x, opts.solver, lambda)?;
        covariance = report.covariance.clone();
        let next = cost.cost(&report.mean)?;
        if !next.is_finite() {
            return Err(OptimizerError::Divergence("non-finite cost after step".into()));
        }
        if opts.levenberg && next > current {
            let scale = cost.linearize(&x)?.j.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max);
            lambda = if lambda == 0.0 { 1e-4 * scale.max(1e-12) } else { lambda * 10.0 };
            continue;
        }
        let step_norm = report.step.amax();
        x = report.mean;
        current = next;
        costs.push(current);
        iterations += 1;
        if opts.levenberg {
            lambda /= 10.0;
        }
        if step_norm <= opts.step_tolerance {
            converged = true;
            break;
        }
    }
    Ok(SolveReport { mean: x, covariance, iterations, converged, costs })
}
