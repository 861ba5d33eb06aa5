use nalgebra::DMatrix;

use super::{BlockId, FactorError, FullState, ResidualBlock, RunningCost};

/// Gaussian on the manifold: `x = μ ⊞ δ` with `δ ~ N(0, Σ)`.
#[derive(Debug, Clone)]
pub struct GaussianBelief {
    pub mean: FullState,
    pub covariance: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: FullState, covariance: DMatrix<f64>) -> Result<Self, FactorError> {
        let d = mean.dim();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(FactorError::Dimension { what: "belief covariance", expected: d, got: covariance.nrows() });
        }
        Ok(Self { mean, covariance })
    }

    /// Marginal over `ids`, in that order.
    pub fn select(&self, ids: &[BlockId]) -> Result<Self, FactorError> {
        let offsets = self.mean.offsets();
        let mut idx = Vec::new();
        for id in ids {
            let (off, d) = *offsets.get(id).ok_or(FactorError::UnknownBlock(*id))?;
            idx.extend(off..off + d);
        }
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.covariance[(idx[i], idx[j])]);
        Ok(Self { mean: self.mean.select(ids)?, covariance: cov })
    }

    /// Prior residual `‖x ⊟ μ‖²_{Σ⁻¹}` over all blocks.
    pub fn to_prior(&self) -> Result<ResidualBlock, FactorError> {
        let ids = self.mean.ids();
        let means = self.mean.blocks().iter().map(|b| b.value.clone()).collect();
        ResidualBlock::prior(ids, means, &self.covariance)
    }

    /// A cost holding only this belief's prior, linearized at the mean.
    pub fn to_cost(&self) -> Result<RunningCost, FactorError> {
        let mut cost = RunningCost::with_state(self.mean.clone());
        cost.add_residual(self.to_prior()?)?;
        Ok(cost)
    }
}
