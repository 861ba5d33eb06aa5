use nalgebra::{DMatrix, DVector};

use super::{BlockId, BlockKind, FactorError, FullState, ResidualBlock};
use crate::manifold::ManifoldPoint;

/// Stacked whitened residuals and their Jacobian at one linearization point.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub c: DVector<f64>,
    pub j: DMatrix<f64>,
}

/// The state blocks together with the residual blocks defined on them.
///
/// Residuals are kept in canonical order (see [`super::ResidualKind`]); among
/// residuals with equal keys, insertion order is preserved.
#[derive(Debug, Clone, Default)]
pub struct RunningCost {
    state: FullState,
    residuals: Vec<ResidualBlock>,
    seqs: Vec<u64>,
    next_seq: u64,
}

impl RunningCost {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_state(state: FullState) -> Self {
        Self { state, ..Self::default() }
    }

    /// Current values of the state blocks.
    pub fn state(&self) -> &FullState {
        &self.state
    }

    /// Replaces the block values; the layout must not change.
    pub fn set_values(&mut self, x: FullState) -> Result<(), FactorError> {
        if !self.state.same_layout(&x) {
            return Err(FactorError::Manifold(crate::manifold::ManifoldError::Structure));
        }
        self.state = x;
        Ok(())
    }

    pub fn add_block(&mut self, id: BlockId, kind: BlockKind, value: ManifoldPoint) -> Result<(), FactorError> {
        self.state.insert(id, kind, value)
    }

    pub fn remove_block(&mut self, id: BlockId) -> Result<(), FactorError> {
        if self.residuals.iter().any(|r| r.blocks.contains(&id)) {
            return Err(FactorError::BlockInUse(id));
        }
        self.state.remove(id).map(|_| ())
    }

    pub fn add_residual(&mut self, block: ResidualBlock) -> Result<(), FactorError> {
        for &id in &block.blocks {
            if !self.state.contains(id) {
                return Err(FactorError::UnknownBlock(id));
            }
        }
        let key = block.kind.sort_key();
        let pos = self.residuals.partition_point(|r| r.kind.sort_key() <= key);
        self.residuals.insert(pos, block);
        self.seqs.insert(pos, self.next_seq);
        self.next_seq += 1;
        Ok(())
    }

    pub fn residuals(&self) -> &[ResidualBlock] {
        &self.residuals
    }

    /// Indices of residuals connected to any of `ids`.
    pub fn touching(&self, ids: &[BlockId]) -> Vec<usize> {
        (0..self.residuals.len())
            .filter(|&i| self.residuals[i].blocks.iter().any(|b| ids.contains(b)))
            .collect()
    }

    /// Removes the residuals at the given indices.
    pub fn remove_residuals(&mut self, indices: &[usize]) -> Vec<ResidualBlock> {
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        let mut removed = Vec::with_capacity(idx.len());
        for &i in idx.iter().rev() {
            self.seqs.remove(i);
            removed.push(self.residuals.remove(i));
        }
        removed.reverse();
        removed
    }

    pub fn residual_dim(&self) -> usize {
        self.residuals.iter().map(ResidualBlock::dim).sum()
    }

    fn check(&self, x: &FullState) -> Result<(), FactorError> {
        if self.state.same_layout(x) {
            Ok(())
        } else {
            Err(FactorError::Manifold(crate::manifold::ManifoldError::Structure))
        }
    }

    /// `C(x)`.
    pub fn stack_residuals(&self, x: &FullState) -> Result<DVector<f64>, FactorError> {
        self.check(x)?;
        let mut out = Vec::with_capacity(self.residual_dim());
        for r in &self.residuals {
            out.extend_from_slice(r.evaluate(x)?.as_slice());
        }
        Ok(DVector::from_vec(out))
    }

    /// `‖C(x)‖²`.
    pub fn cost(&self, x: &FullState) -> Result<f64, FactorError> {
        Ok(self.stack_residuals(x)?.norm_squared())
    }

    /// `C(x)` and `∂C/∂δ` with columns laid out as in `x`.
    pub fn linearize(&self, x: &FullState) -> Result<Linearization, FactorError> {
        let all: Vec<usize> = (0..self.residuals.len()).collect();
        self.linearize_rows(&all, x)
    }

    /// Same as [`RunningCost::linearize`] restricted to a subset of residuals.
    pub fn linearize_rows(&self, indices: &[usize], x: &FullState) -> Result<Linearization, FactorError> {
        self.check(x)?;
        let offsets = x.offsets();
        let rows: usize = indices.iter().map(|&i| self.residuals[i].dim()).sum();
        let mut c = DVector::zeros(rows);
        let mut j = DMatrix::zeros(rows, x.dim());
        let mut row = 0;
        for &i in indices {
            let r = &self.residuals[i];
            let m = r.dim();
            c.rows_mut(row, m).copy_from(&r.evaluate(x)?);
            for (id, jb) in r.blocks.iter().zip(r.jacobians(x)?) {
                let (off, d) = offsets[id];
                if jb.nrows() != m || jb.ncols() != d {
                    return Err(FactorError::Dimension { what: "residual Jacobian", expected: d, got: jb.ncols() });
                }
                let mut view = j.view_mut((row, off), (m, d));
                view += jb;
            }
            row += m;
        }
        Ok(Linearization { c, j })
    }
}
