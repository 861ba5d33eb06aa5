use std::collections::HashMap;
use std::fmt;

use nalgebra::DVector;

use super::FactorError;
use crate::manifold::ManifoldPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u64);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    ImuState,
    Pose,
    Feature,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateBlock {
    pub id: BlockId,
    pub kind: BlockKind,
    pub value: ManifoldPoint,
}

/// Ordered collection of state blocks. Tangent coordinates of the whole state
/// are the concatenation of the block tangents in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FullState {
    blocks: Vec<StateBlock>,
}

impl FullState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: BlockId, kind: BlockKind, value: ManifoldPoint) -> Result<(), FactorError> {
        if self.position(id).is_some() {
            return Err(FactorError::DuplicateBlock(id));
        }
        self.blocks.push(StateBlock { id, kind, value });
        Ok(())
    }

    pub fn remove(&mut self, id: BlockId) -> Result<StateBlock, FactorError> {
        let i = self.position(id).ok_or(FactorError::UnknownBlock(id))?;
        Ok(self.blocks.remove(i))
    }

    pub fn position(&self, id: BlockId) -> Option<usize> {
        self.blocks.iter().position(|b| b.id == id)
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.position(id).is_some()
    }

    pub fn get(&self, id: BlockId) -> Result<&ManifoldPoint, FactorError> {
        self.blocks.iter().find(|b| b.id == id).map(|b| &b.value).ok_or(FactorError::UnknownBlock(id))
    }

    pub fn block(&self, id: BlockId) -> Result<&StateBlock, FactorError> {
        self.blocks.iter().find(|b| b.id == id).ok_or(FactorError::UnknownBlock(id))
    }

    pub fn set(&mut self, id: BlockId, value: ManifoldPoint) -> Result<(), FactorError> {
        let b = self.blocks.iter_mut().find(|b| b.id == id).ok_or(FactorError::UnknownBlock(id))?;
        if !b.value.same_structure(&value) {
            return Err(FactorError::Manifold(crate::manifold::ManifoldError::Structure));
        }
        b.value = value;
        Ok(())
    }

    pub fn blocks(&self) -> &[StateBlock] {
        &self.blocks
    }

    pub fn ids(&self) -> Vec<BlockId> {
        self.blocks.iter().map(|b| b.id).collect()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.value.tangent_dim()).sum()
    }

    /// Tangent offset of every block, in block order.
    pub fn offsets(&self) -> HashMap<BlockId, (usize, usize)> {
        let mut off = 0;
        let mut out = HashMap::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let d = b.value.tangent_dim();
            out.insert(b.id, (off, d));
            off += d;
        }
        out
    }

    pub fn offset(&self, id: BlockId) -> Result<(usize, usize), FactorError> {
        let mut off = 0;
        for b in &self.blocks {
            let d = b.value.tangent_dim();
            if b.id == id {
                return Ok((off, d));
            }
            off += d;
        }
        Err(FactorError::UnknownBlock(id))
    }

    /// Same ids, kinds and manifold structure in the same order.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.id == b.id && a.kind == b.kind && a.value.same_structure(&b.value))
    }

    pub fn boxplus(&self, delta: &DVector<f64>) -> Result<Self, FactorError> {
        let d = self.dim();
        if delta.len() != d {
            return Err(FactorError::Dimension { what: "state increment", expected: d, got: delta.len() });
        }
        let mut off = 0;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let k = b.value.tangent_dim();
            blocks.push(StateBlock {
                id: b.id,
                kind: b.kind,
                value: b.value.boxplus(&delta.as_slice()[off..off + k])?,
            });
            off += k;
        }
        Ok(Self { blocks })
    }

    pub fn boxminus(&self, other: &Self) -> Result<DVector<f64>, FactorError> {
        if !self.same_layout(other) {
            return Err(FactorError::Manifold(crate::manifold::ManifoldError::Structure));
        }
        let mut out = Vec::with_capacity(self.dim());
        for (a, b) in self.blocks.iter().zip(&other.blocks) {
            out.extend_from_slice(a.value.boxminus(&b.value)?.as_slice());
        }
        Ok(DVector::from_vec(out))
    }

    /// Sub-state with the given blocks in the given order.
    pub fn select(&self, ids: &[BlockId]) -> Result<Self, FactorError> {
        let blocks = ids.iter().map(|&id| self.block(id).cloned()).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { blocks })
    }
}
