//! State layout, residual blocks and the running cost they stack into.
//!
//! Every residual is whitened: the stacked vector `C(x)` already carries the
//! `sqrt_info` weights, so the cost is `‖C(x)‖²`.

mod belief;
mod cost;
pub mod models;
mod residual;
mod state;

pub use belief::GaussianBelief;
pub use cost::{Linearization, RunningCost};
pub use residual::{
    finite_difference_jacobians, sqrt_info_from_covariance, sqrt_info_from_information, DynamicsResidual,
    LinearResidual, MeasurementResidual, PoseLinkResidual, PriorResidual, ResidualBlock, ResidualKind,
    ResidualModel, FD_STEP,
};
pub use state::{BlockId, BlockKind, FullState, StateBlock};

use thiserror::Error;

use crate::manifold::ManifoldError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FactorError {
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("unknown state block {0}")]
    UnknownBlock(BlockId),
    #[error("state block {0} already exists")]
    DuplicateBlock(BlockId),
    #[error("state block {0} is still referenced by a residual")]
    BlockInUse(BlockId),
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("{0} is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("model evaluation failed: {0}")]
    Model(String),
}
