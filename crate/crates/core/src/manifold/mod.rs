//! Charts for the state manifolds: Euclidean spaces, unit quaternions,
//! rotation matrices and products of these.
//!
//! Rotations are perturbed on the right:
//! `q ⊞ ω = q ⋆ Exp(ω)` and `q_a ⊟ q_b = Log(q_b⁻¹ ⋆ q_a)`, and likewise
//! `R ⊞ ω = R·Exp(ω)`, `R_a ⊟ R_b = Log(R_bᵀ R_a)`.
//! Quaternions are stored scalar first and compose with the Hamilton product,
//! so the rotation matrix of `Exp(ω)` is the Rodrigues matrix of `ω`.

mod point;
mod quaternion;
mod rotation;
mod so3;

pub use point::ManifoldPoint;
pub use quaternion::UnitQuaternion;
pub use rotation::Rotation;
pub use so3::{exp_rotvec, hat, inv_jacobian_left, inv_jacobian_right, jacobian_right, vee};

use nalgebra::DVector;
use thiserror::Error;

/// Below this angle the closed forms switch to Taylor series.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Distance from π at which `Exp`/`Log` stop being a chart.
pub const PI_MARGIN: f64 = 1e-12;

/// Tangent-space coordinates.
pub type TangentVector = DVector<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifoldError {
    #[error("rotation angle {angle} is outside the chart domain |angle| < pi")]
    Domain { angle: f64 },
    #[error("tangent dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("manifold structure mismatch")]
    Structure,
}
