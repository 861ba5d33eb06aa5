use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::models::{MeasurementModel, PoseMap, StepDynamics};
use super::{BlockId, FactorError, FullState};
use crate::manifold::ManifoldPoint;

/// Central-difference step on tangent coordinates.
pub const FD_STEP: f64 = 1e-6;

/// Category of a residual; also fixes its position in the stacked vector:
/// priors first, then dynamics by step, then measurements by (frame, feature),
/// then pose-link constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    Prior,
    Dynamics { step: u64 },
    Measurement { frame: u64, feature: u64 },
    Constraint { frame: u64 },
}

impl ResidualKind {
    pub(crate) fn sort_key(&self) -> (u8, u64, u64) {
        match *self {
            Self::Prior => (0, 0, 0),
            Self::Dynamics { step } => (1, step, 0),
            Self::Measurement { frame, feature } => (2, frame, feature),
            Self::Constraint { frame } => (3, frame, 0),
        }
    }
}

/// Unweighted residual function of the blocks it connects.
pub trait ResidualModel: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn evaluate(&self, blocks: &[&ManifoldPoint]) -> Result<DVector<f64>, FactorError>;

    /// Analytic Jacobians with respect to each connected block's tangent, if
    /// the model provides them.
    fn jacobians(&self, _blocks: &[&ManifoldPoint]) -> Option<Result<Vec<DMatrix<f64>>, FactorError>> {
        None
    }
}

/// Central differences on tangent coordinates, perturbing through `⊞`.
pub fn finite_difference_jacobians(
    model: &dyn ResidualModel,
    blocks: &[&ManifoldPoint],
) -> Result<Vec<DMatrix<f64>>, FactorError> {
    let m = model.dim();
    let mut out = Vec::with_capacity(blocks.len());
    for i in 0..blocks.len() {
        let d = blocks[i].tangent_dim();
        let mut j = DMatrix::zeros(m, d);
        let mut delta = vec![0.0; d];
        for k in 0..d {
            delta[k] = FD_STEP;
            let plus = blocks[i].boxplus(&delta)?;
            delta[k] = -FD_STEP;
            let minus = blocks[i].boxplus(&delta)?;
            delta[k] = 0.0;
            let mut args: Vec<&ManifoldPoint> = blocks.to_vec();
            args[i] = &plus;
            let rp = model.evaluate(&args)?;
            args[i] = &minus;
            let rm = model.evaluate(&args)?;
            j.set_column(k, &((rp - rm) / (2.0 * FD_STEP)));
        }
        out.push(j);
    }
    Ok(out)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `S` with `SᵀS = Σ⁻¹`: the inverse of the lower Cholesky factor of `Σ`.
pub fn sqrt_info_from_covariance(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, FactorError> {
    if !cov.is_square() {
        return Err(FactorError::Dimension { what: "covariance", expected: cov.nrows(), got: cov.ncols() });
    }
    let chol = symmetrize(cov).cholesky().ok_or(FactorError::NotPositiveDefinite("covariance"))?;
    let l = chol.l();
    let n = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n)).ok_or(FactorError::NotPositiveDefinite("covariance"))
}

/// `S` with `SᵀS = Λ`. Uses Cholesky when `Λ` is positive definite and a
/// symmetric eigen square root when it is only semidefinite.
pub fn sqrt_info_from_information(info: &DMatrix<f64>) -> Result<DMatrix<f64>, FactorError> {
    let sym = symmetrize(info);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.l().transpose());
    }
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.min() < -1e-9 * scale {
        return Err(FactorError::NotPositiveDefinite("information matrix"));
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(DMatrix::from_diagonal(&sqrt) * eig.eigenvectors.transpose())
}

/// A residual model attached to state blocks with a whitening matrix.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub kind: ResidualKind,
    pub blocks: Vec<BlockId>,
    pub sqrt_info: DMatrix<f64>,
    pub model: Arc<dyn ResidualModel>,
}

impl ResidualBlock {
    pub fn new(
        kind: ResidualKind,
        blocks: Vec<BlockId>,
        sqrt_info: DMatrix<f64>,
        model: Arc<dyn ResidualModel>,
    ) -> Result<Self, FactorError> {
        let m = model.dim();
        if sqrt_info.nrows() != m || sqrt_info.ncols() != m {
            return Err(FactorError::Dimension { what: "sqrt_info", expected: m, got: sqrt_info.nrows() });
        }
        Ok(Self { kind, blocks, sqrt_info, model })
    }

    /// Gaussian prior `‖x ⊟ μ‖²_{Σ⁻¹}` over the listed blocks.
    pub fn prior(ids: Vec<BlockId>, means: Vec<ManifoldPoint>, cov: &DMatrix<f64>) -> Result<Self, FactorError> {
        let model = PriorResidual::new(means);
        let sqrt_info = sqrt_info_from_covariance(cov)?;
        Self::new(ResidualKind::Prior, ids, sqrt_info, Arc::new(model))
    }

    /// Same as [`ResidualBlock::prior`] but from an information matrix.
    pub fn prior_from_information(
        ids: Vec<BlockId>,
        means: Vec<ManifoldPoint>,
        info: &DMatrix<f64>,
    ) -> Result<Self, FactorError> {
        let model = PriorResidual::new(means);
        let sqrt_info = sqrt_info_from_information(info)?;
        Self::new(ResidualKind::Prior, ids, sqrt_info, Arc::new(model))
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    fn points<'a>(&self, x: &'a FullState) -> Result<Vec<&'a ManifoldPoint>, FactorError> {
        self.blocks.iter().map(|&id| x.get(id)).collect()
    }

    pub fn raw(&self, x: &FullState) -> Result<DVector<f64>, FactorError> {
        self.model.evaluate(&self.points(x)?)
    }

    /// Whitened residual `sqrt_info · r(x)`.
    pub fn evaluate(&self, x: &FullState) -> Result<DVector<f64>, FactorError> {
        Ok(&self.sqrt_info * self.raw(x)?)
    }

    /// Whitened Jacobians, analytic when available.
    pub fn jacobians(&self, x: &FullState) -> Result<Vec<DMatrix<f64>>, FactorError> {
        let pts = self.points(x)?;
        let raw = match self.model.jacobians(&pts) {
            Some(j) => j?,
            None => finite_difference_jacobians(self.model.as_ref(), &pts)?,
        };
        Ok(raw.into_iter().map(|j| &self.sqrt_info * j).collect())
    }

    pub fn numeric_jacobians(&self, x: &FullState) -> Result<Vec<DMatrix<f64>>, FactorError> {
        let pts = self.points(x)?;
        let raw = finite_difference_jacobians(self.model.as_ref(), &pts)?;
        Ok(raw.into_iter().map(|j| &self.sqrt_info * j).collect())
    }
}

/// `r = (x_1 ⊟ μ_1, …, x_k ⊟ μ_k)`.
#[derive(Debug, Clone)]
pub struct PriorResidual {
    pub means: Vec<ManifoldPoint>,
}

impl PriorResidual {
    pub fn new(means: Vec<ManifoldPoint>) -> Self {
        Self { means }
    }
}

impl ResidualModel for PriorResidual {
    fn dim(&self) -> usize {
        self.means.iter().map(ManifoldPoint::tangent_dim).sum()
    }

    fn evaluate(&self, blocks: &[&ManifoldPoint]) -> Result<DVector<f64>, FactorError> {
        if blocks.len() != self.means.len() {
            return Err(FactorError::Dimension { what: "prior blocks", expected: self.means.len(), got: blocks.len() });
        }
        let mut out = Vec::with_capacity(self.dim());
        for (x, mu) in blocks.iter().zip(&self.means) {
            out.extend_from_slice(x.boxminus(mu)?.as_slice());
        }
        Ok(DVector::from_vec(out))
    }

    fn jacobians(&self, blocks: &[&ManifoldPoint]) -> Option<Result<Vec<DMatrix<f64>>, FactorError>> {
        let m = self.dim();
        let run = || {
            let mut out = Vec::with_capacity(blocks.len());
            let mut row = 0;
            for (x, mu) in blocks.iter().zip(&self.means) {
                let (ja, _) = x.boxminus_jacobians(mu)?;
                let d = ja.nrows();
                let mut j = DMatrix::zeros(m, d);
                j.view_mut((row, 0), (d, d)).copy_from(&ja);
                out.push(j);
                row += d;
            }
            Ok(out)
        };
        Some(run())
    }
}

/// `r = Σ_i A_i x_i − b` over Euclidean blocks.
#[derive(Debug, Clone)]
pub struct LinearResidual {
    pub a: Vec<DMatrix<f64>>,
    pub b: DVector<f64>,
}

impl ResidualModel for LinearResidual {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn evaluate(&self, blocks: &[&ManifoldPoint]) -> Result<DVector<f64>, FactorError> {
        let mut r = -self.b.clone();
        for (a, x) in self.a.iter().zip(blocks) {
            let v = x.as_euclidean().ok_or_else(|| FactorError::Model("linear residual needs Euclidean blocks".into()))?;
            r += a * v;
        }
        Ok(r)
    }

    fn jacobians(&self, _blocks: &[&ManifoldPoint]) -> Option<Result<Vec<DMatrix<f64>>, FactorError>> {
        Some(Ok(self.a.clone()))
    }
}

/// `r = x_{t+1} ⊟ g(x_t)`, connected as `[x_t, x_{t+1}]`.
#[derive(Debug, Clone)]
pub struct DynamicsResidual {
    pub dynamics: Arc<dyn StepDynamics>,
}

impl ResidualModel for DynamicsResidual {
    fn dim(&self) -> usize {
        self.dynamics.noise_covariance().nrows()
    }

    fn evaluate(&self, blocks: &[&ManifoldPoint]) -> Result<DVector<f64>, FactorError> {
        let pred = self.dynamics.propagate(blocks[0])?;
        Ok(blocks[1].boxminus(&pred)?)
    }

    fn jacobians(&self, blocks: &[&ManifoldPoint]) -> Option<Result<Vec<DMatrix<f64>>, FactorError>> {
        let run = || {
            let pred = self.dynamics.propagate(blocks[0])?;
            let (ja, jb) = blocks[1].boxminus_jacobians(&pred)?;
            let g = self.dynamics.jacobian(blocks[0])?;
            Ok(vec![jb * g, ja])
        };
        Some(run())
    }
}

/// `r = h(ψ(x_frame), f) − z`, connected as `[frame, feature]`.
#[derive(Debug, Clone)]
pub struct MeasurementResidual {
    pub model: Arc<dyn MeasurementModel>,
    pub pose_map: Arc<dyn PoseMap>,
    pub z: DVector<f64>,
}

impl MeasurementResidual {
    fn feature<'a>(&self, p: &'a ManifoldPoint) -> Result<&'a DVector<f64>, FactorError> {
        p.as_euclidean().ok_or_else(|| FactorError::Model("feature block must be Euclidean".into()))
    }
}

impl ResidualModel for MeasurementResidual {
    fn dim(&self) -> usize {
        self.z.len()
    }

    fn evaluate(&self, blocks: &[&ManifoldPoint]) -> Result<DVector<f64>, FactorError> {
        let pose = self.pose_map.pose(blocks[0])?;
        Ok(self.model.predict(&pose, self.feature(blocks[1])?)? - &self.z)
    }

    fn jacobians(&self, blocks: &[&ManifoldPoint]) -> Option<Result<Vec<DMatrix<f64>>, FactorError>> {
        let run = || {
            let pose = self.pose_map.pose(blocks[0])?;
            let (hp, hf) = self.model.jacobians(&pose, self.feature(blocks[1])?)?;
            let psi = self.pose_map.jacobian(blocks[0])?;
            Ok(vec![hp * psi, hf])
        };
        Some(run())
    }
}

/// `r = x_pose ⊟ ψ(x_process)`, connected as `[process, pose]`. Weighted by
/// `ε^{-1/2}` it ties a cloned pose to the state it was cloned from.
#[derive(Debug, Clone)]
pub struct PoseLinkResidual {
    pub pose_map: Arc<dyn PoseMap>,
    pub dim: usize,
}

impl ResidualModel for PoseLinkResidual {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, blocks: &[&ManifoldPoint]) -> Result<DVector<f64>, FactorError> {
        let pred = self.pose_map.pose(blocks[0])?;
        Ok(blocks[1].boxminus(&pred)?)
    }

    fn jacobians(&self, blocks: &[&ManifoldPoint]) -> Option<Result<Vec<DMatrix<f64>>, FactorError>> {
        let run = || {
            let pred = self.pose_map.pose(blocks[0])?;
            let (ja, jb) = blocks[1].boxminus_jacobians(&pred)?;
            let psi = self.pose_map.jacobian(blocks[0])?;
            Ok(vec![jb * psi, ja])
        };
        Some(run())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_example_from_isotropic_covariance() {
        let cov = DMatrix::identity(2, 2) * 4.0;
        let block = ResidualBlock::prior(vec![BlockId(0)], vec![ManifoldPoint::euclidean(&[0.0, 0.0])], &cov).unwrap();
        let mut x = FullState::new();
        x.insert(BlockId(0), super::super::BlockKind::Euclidean, ManifoldPoint::euclidean(&[2.0, 0.0])).unwrap();
        let c = block.evaluate(&x).unwrap();
        assert!((c - DVector::from_column_slice(&[1.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn sqrt_info_squares_to_information() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.3, 1.0, 0.2, -0.1, 0.2, 0.5]);
        let s = sqrt_info_from_covariance(&a).unwrap();
        let inv = a.clone().try_inverse().unwrap();
        assert!((s.transpose() * &s - inv).norm() < 1e-12);
        let s2 = sqrt_info_from_information(&a).unwrap();
        assert!((s2.transpose() * s2 - a).norm() < 1e-12);
    }

    #[test]
    fn non_spd_covariance_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(sqrt_info_from_covariance(&a), Err(FactorError::NotPositiveDefinite("covariance")));
    }

    #[test]
    fn semidefinite_information_has_a_square_root() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = sqrt_info_from_information(&a).unwrap();
        assert!((s.transpose() * s - a).norm() < 1e-12);
    }
}
