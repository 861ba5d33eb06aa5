use std::sync::Arc;

use nalgebra::DMatrix;

use super::{checked_svd, svd_solve, OptimizerError, PINV_RCOND};
use crate::factors::{BlockId, FullState, PriorResidual, ResidualBlock, ResidualKind, RunningCost};

/// Which residuals are folded into the new prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarginalizationScope {
    /// Only residuals touching the marginalized blocks.
    #[default]
    Touching,
    /// Every residual in the cost, so the result is the full posterior over
    /// the kept blocks.
    All,
}

#[derive(Debug, Clone)]
pub struct MarginalizationReport {
    /// Kept blocks the new prior is defined on, in state order.
    pub kept: Vec<BlockId>,
    /// `μ_K = x*_K ⊞ (−Σ_K J_Kᵀ P C₂)`.
    pub mean: FullState,
    /// `Σ_K = (J_Kᵀ P J_K)⁻¹`, a pseudoinverse when the kept blocks are only
    /// partially constrained.
    pub covariance: DMatrix<f64>,
    pub information: DMatrix<f64>,
    pub rank: usize,
    pub removed_residuals: usize,
}

/// Marginalizes `marg` out of `cost`, linearizing at `x`.
///
/// With `P = I − J_M (J_MᵀJ_M)⁻¹ J_Mᵀ` the folded residuals are replaced by
/// `‖x_K ⊟ μ_K‖²` weighted by `J_KᵀPJ_K`. Block values in the cost are left at `x`.
pub fn marginalize(
    cost: &mut RunningCost,
    x: &FullState,
    marg: &[BlockId],
    scope: MarginalizationScope,
) -> Result<MarginalizationReport, OptimizerError> {
    marginalize_with(cost, x, marg, scope, PINV_RCOND)
}

/// [`marginalize`] with an explicit pseudoinverse cutoff for the kept-block
/// solve, for costs whose conditioning is known to exceed the default.
pub fn marginalize_with(
    cost: &mut RunningCost,
    x: &FullState,
    marg: &[BlockId],
    scope: MarginalizationScope,
    rcond: f64,
) -> Result<MarginalizationReport, OptimizerError> {
    for &id in marg {
        x.block(id)?;
    }
    let folded: Vec<usize> = match scope {
        MarginalizationScope::Touching => cost.touching(marg),
        MarginalizationScope::All => (0..cost.residuals().len()).collect(),
    };
    let kept: Vec<BlockId> = x
        .ids()
        .into_iter()
        .filter(|id| !marg.contains(id) && folded.iter().any(|&i| cost.residuals()[i].blocks.contains(id)))
        .collect();

    let lin = cost.linearize_rows(&folded, x)?;
    let offsets = x.offsets();
    let cols = |ids: &[BlockId]| -> Vec<usize> {
        ids.iter().flat_map(|id| {
            let (o, d) = offsets[id];
            o..o + d
        })
        .collect()
    };
    let (kc, mc) = (cols(&kept), cols(marg));
    let jk = lin.j.select_columns(kc.iter());
    let jm = lin.j.select_columns(mc.iter());

    // Orthonormal basis of range(J_M); P applies I − U Uᵀ.
    let (pjk, pc) = if mc.is_empty() {
        (jk, lin.c.clone())
    } else {
        let svd = checked_svd(&jm);
        let s = &svd.singular_values;
        let smax = s.max();
        let full = s.len() == mc.len() && s.iter().all(|&v| v > 0.0 && v * v > PINV_RCOND * smax * smax);
        if !full {
            return Err(OptimizerError::RankDeficient { blocks: marg.to_vec() });
        }
        let u = svd.u.expect("svd u");
        let pjk = &jk - &u * (u.transpose() * &jk);
        let pc = &lin.c - &u * (u.transpose() * &lin.c);
        (pjk, pc)
    };

    let sol = svd_solve(&pjk, &pc, rcond);
    let information = super::symmetrize(&(pjk.transpose() * &pjk));
    let x_k = x.select(&kept)?;
    let mean = x_k.boxplus(&sol.delta)?;

    cost.remove_residuals(&folded);
    for &id in marg {
        cost.remove_block(id)?;
    }
    if !kept.is_empty() {
        let means = mean.blocks().iter().map(|b| b.value.clone()).collect();
        let prior = ResidualBlock::new(
            ResidualKind::Prior,
            kept.clone(),
            sol.sqrt_info.clone(),
            Arc::new(PriorResidual::new(means)),
        )?;
        cost.add_residual(prior)?;
    }
    Ok(MarginalizationReport {
        kept,
        mean,
        covariance: sol.covariance,
        information,
        rank: sol.rank,
        removed_residuals: folded.len(),
    })
}

/// Dense reference: marginal of the Gaussian with information `Λ` and
/// information vector `η` over the index set `keep`.
#[cfg(test)]
pub(crate) fn dense_marginal(
    lambda: &DMatrix<f64>,
    eta: &nalgebra::DVector<f64>,
    keep: &[usize],
) -> (nalgebra::DVector<f64>, DMatrix<f64>) {
    let cov = lambda.clone().try_inverse().expect("invertible");
    let mean = &cov * eta;
    let m = nalgebra::DVector::from_fn(keep.len(), |i, _| mean[keep[i]]);
    let c = DMatrix::from_fn(keep.len(), keep.len(), |i, j| cov[(keep[i], keep[j])]);
    (m, c)
}
