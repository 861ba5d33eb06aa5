//! Gauss-Newton steps and marginalization on a [`RunningCost`].
//!
//! A Gauss-Newton step about `x*` returns `μ = x* ⊞ (−(JᵀJ)⁺JᵀC(x*))` and
//! `Σ = (JᵀJ)⁺`. Marginalization replaces the residuals touching the removed
//! blocks by one Gaussian prior on the kept blocks they connect.

mod gauss_newton;
mod marginalize;

pub use gauss_newton::{
    gauss_newton_solve, gauss_newton_step, gauss_newton_step_with, GaussNewtonReport, LinearSolver, SolveOptions,
    SolveReport,
};
pub use marginalize::{marginalize, marginalize_with, MarginalizationReport, MarginalizationScope};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::factors::{BlockId, FactorError};

/// Relative cutoff on eigenvalues of `JᵀJ` for the pseudoinverse.
pub const PINV_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("marginalized blocks are not determined by their residuals: {blocks:?}")]
    RankDeficient { blocks: Vec<BlockId> },
    #[error("linear system is singular")]
    Singular,
    #[error("optimization diverged: {0}")]
    Divergence(String),
}

impl From<crate::manifold::ManifoldError> for OptimizerError {
    fn from(e: crate::manifold::ManifoldError) -> Self {
        Self::Factor(e.into())
    }
}

/// Least-squares solution of `J δ ≈ −C` through the SVD of `J`.
pub(crate) struct SvdSolution {
    pub delta: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// `diag(s) Vᵀ` over the retained singular values, padded to square.
    pub sqrt_info: DMatrix<f64>,
    pub rank: usize,
}

pub(crate) fn svd_solve(j: &DMatrix<f64>, c: &DVector<f64>, rcond: f64) -> SvdSolution {
    let n = j.ncols();
    if n == 0 {
        return SvdSolution {
            delta: DVector::zeros(0),
            covariance: DMatrix::zeros(0, 0),
            sqrt_info: DMatrix::zeros(0, 0),
            rank: 0,
        };
    }
    let svd = checked_svd(j);
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let s = &svd.singular_values;
    let smax = s.max();
    let kept: Vec<usize> = (0..s.len()).filter(|&i| s[i] > 0.0 && s[i] * s[i] > rcond * smax * smax).collect();
    let apply_pinv = |r: &DVector<f64>| {
        let utr = u.transpose() * r;
        let mut out = DVector::zeros(n);
        for &i in &kept {
            out += vt.row(i).transpose() * (utr[i] / s[i]);
        }
        out
    };
    let delta = -apply_pinv(c);
    let mut cov = DMatrix::zeros(n, n);
    let mut sqrt_info = DMatrix::zeros(n, n);
    for (rank, &i) in kept.iter().enumerate() {
        let v = vt.row(i).transpose();
        cov += &v * v.transpose() / (s[i] * s[i]);
        sqrt_info.row_mut(rank).copy_from(&(vt.row(i) * s[i]));
    }
    SvdSolution { delta, covariance: symmetrize(&cov), sqrt_info, rank: kept.len() }
}

/// Thin SVD through faer, whose factorization is accurate to round-off where
/// nalgebra's can stop near 1e-11 relative. Falls back to nalgebra if faer
/// does not converge.
pub(crate) fn checked_svd(m: &DMatrix<f64>) -> nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn> {
    let (rows, cols) = m.shape();
    let f = faer::Mat::<f64>::from_fn(rows, cols, |r, c| m[(r, c)]);
    match f.thin_svd() {
        Ok(svd) => {
            let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
            let k = s.nrows();
            nalgebra::SVD {
                u: Some(DMatrix::from_fn(rows, k, |r, c| u[(r, c)])),
                v_t: Some(DMatrix::from_fn(k, cols, |r, c| v[(c, r)])),
                singular_values: DVector::from_fn(k, |i, _| s[i]),
            }
        }
        Err(e) => {
            log::warn!("faer SVD failed on a {rows}x{cols} matrix: {e:?}");
            m.clone().svd(true, true)
        }
    }
}

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}
