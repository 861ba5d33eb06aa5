use nalgebra::{DMatrix, DVector, Vector3};

use super::{inv_jacobian_left, inv_jacobian_right, ManifoldError, Rotation, UnitQuaternion};

/// A point on one of the supported manifolds. Products act componentwise with
/// tangent coordinates concatenated in component order.
#[derive(Debug, Clone, PartialEq)]
pub enum ManifoldPoint {
    Euclidean(DVector<f64>),
    Quaternion(UnitQuaternion),
    Rotation(Rotation),
    Product(Vec<ManifoldPoint>),
}

impl ManifoldPoint {
    pub fn euclidean(values: &[f64]) -> Self {
        Self::Euclidean(DVector::from_column_slice(values))
    }

    pub fn tangent_dim(&self) -> usize {
        match self {
            Self::Euclidean(v) => v.len(),
            Self::Quaternion(_) | Self::Rotation(_) => 3,
            Self::Product(parts) => parts.iter().map(Self::tangent_dim).sum(),
        }
    }

    pub fn same_structure(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Euclidean(a), Self::Euclidean(b)) => a.len() == b.len(),
            (Self::Quaternion(_), Self::Quaternion(_)) | (Self::Rotation(_), Self::Rotation(_)) => true,
            (Self::Product(a), Self::Product(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_structure(y))
            }
            _ => false,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Self::Euclidean(v) => v.iter().all(|x| x.is_finite()),
            Self::Quaternion(q) => q.coords().iter().all(|x| x.is_finite()),
            Self::Rotation(r) => r.matrix().iter().all(|x| x.is_finite()),
            Self::Product(parts) => parts.iter().all(Self::is_finite),
        }
    }

    pub fn as_euclidean(&self) -> Option<&DVector<f64>> {
        match self {
            Self::Euclidean(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_quaternion(&self) -> Option<&UnitQuaternion> {
        match self {
            Self::Quaternion(q) => Some(q),
            _ => None,
        }
    }

    pub fn component(&self, i: usize) -> Option<&ManifoldPoint> {
        match self {
            Self::Product(parts) => parts.get(i),
            _ => None,
        }
    }

    pub fn boxplus(&self, delta: &[f64]) -> Result<Self, ManifoldError> {
        let d = self.tangent_dim();
        if delta.len() != d {
            return Err(ManifoldError::Dimension { expected: d, got: delta.len() });
        }
        match self {
            Self::Euclidean(v) => Ok(Self::Euclidean(v + DVector::from_column_slice(delta))),
            Self::Quaternion(q) => Ok(Self::Quaternion(q.boxplus(&Vector3::from_column_slice(delta))?)),
            Self::Rotation(r) => Ok(Self::Rotation(r.boxplus(&Vector3::from_column_slice(delta))?)),
            Self::Product(parts) => {
                let mut off = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let k = p.tangent_dim();
                    out.push(p.boxplus(&delta[off..off + k])?);
                    off += k;
                }
                Ok(Self::Product(out))
            }
        }
    }

    /// `self ⊟ other`.
    pub fn boxminus(&self, other: &Self) -> Result<DVector<f64>, ManifoldError> {
        match (self, other) {
            (Self::Euclidean(a), Self::Euclidean(b)) if a.len() == b.len() => Ok(a - b),
            (Self::Quaternion(a), Self::Quaternion(b)) => Ok(DVector::from_column_slice(a.boxminus(b)?.as_slice())),
            (Self::Rotation(a), Self::Rotation(b)) => Ok(DVector::from_column_slice(a.boxminus(b)?.as_slice())),
            (Self::Product(a), Self::Product(b)) if a.len() == b.len() => {
                let mut out = Vec::with_capacity(self.tangent_dim());
                for (x, y) in a.iter().zip(b) {
                    out.extend_from_slice(x.boxminus(y)?.as_slice());
                }
                Ok(DVector::from_vec(out))
            }
            _ => Err(ManifoldError::Structure),
        }
    }

    /// Jacobians of `r = self ⊟ other` with respect to right perturbations of
    /// `self` and of `other`.
    pub fn boxminus_jacobians(&self, other: &Self) -> Result<(DMatrix<f64>, DMatrix<f64>), ManifoldError> {
        let r = self.boxminus(other)?;
        let d = r.len();
        let mut ja = DMatrix::identity(d, d);
        let mut jb = -DMatrix::identity(d, d);
        let mut rot_offsets = Vec::new();
        self.rotation_offsets(0, &mut rot_offsets);
        for off in rot_offsets {
            let t = Vector3::new(r[off], r[off + 1], r[off + 2]);
            ja.fixed_view_mut::<3, 3>(off, off).copy_from(&inv_jacobian_right(&t));
            jb.fixed_view_mut::<3, 3>(off, off).copy_from(&(-inv_jacobian_left(&t)));
        }
        Ok((ja, jb))
    }

    /// Tangent offsets of the rotational components.
    pub fn rotation_offsets(&self, base: usize, out: &mut Vec<usize>) {
        match self {
            Self::Euclidean(_) => {}
            Self::Quaternion(_) | Self::Rotation(_) => out.push(base),
            Self::Product(parts) => {
                let mut off = base;
                for p in parts {
                    p.rotation_offsets(off, out);
                    off += p.tangent_dim();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose() -> ManifoldPoint {
        ManifoldPoint::Product(vec![
            ManifoldPoint::Quaternion(UnitQuaternion::exp(&Vector3::new(0.2, -0.4, 1.0)).unwrap()),
            ManifoldPoint::euclidean(&[1.0, 2.0, 3.0]),
        ])
    }

    #[test]
    fn euclidean_example() {
        let x = ManifoldPoint::euclidean(&[1.0, 2.0]);
        assert_eq!(x.boxplus(&[0.5, -1.0]).unwrap(), ManifoldPoint::euclidean(&[1.5, 1.0]));
    }

    #[test]
    fn product_round_trip() {
        let x = pose();
        let d = [0.1, 0.0, -0.2, 0.5, 0.5, -1.0];
        let y = x.boxplus(&d).unwrap();
        let back = y.boxminus(&x).unwrap();
        assert!((back - DVector::from_column_slice(&d)).norm() < 1e-14);
    }

    #[test]
    fn structure_mismatch_is_an_error() {
        let a = ManifoldPoint::euclidean(&[1.0, 2.0]);
        let b = ManifoldPoint::euclidean(&[1.0]);
        assert_eq!(a.boxminus(&b), Err(ManifoldError::Structure));
        assert!(matches!(a.boxplus(&[1.0]), Err(ManifoldError::Dimension { expected: 2, got: 1 })));
    }

    #[test]
    fn boxminus_jacobians_match_finite_differences() {
        let a = pose();
        let b = pose().boxplus(&[0.3, 0.1, -0.2, 0.0, 1.0, 0.0]).unwrap();
        let (ja, jb) = a.boxminus_jacobians(&b).unwrap();
        let h = 1e-6;
        for k in 0..6 {
            let mut e = [0.0; 6];
            e[k] = h;
            let mut em = [0.0; 6];
            em[k] = -h;
            let da = (a.boxplus(&e).unwrap().boxminus(&b).unwrap() - a.boxplus(&em).unwrap().boxminus(&b).unwrap()) / (2.0 * h);
            let db = (a.boxminus(&b.boxplus(&e).unwrap()).unwrap() - a.boxminus(&b.boxplus(&em).unwrap()).unwrap()) / (2.0 * h);
            assert!((da - ja.column(k)).norm() < 1e-8);
            assert!((db - jb.column(k)).norm() < 1e-8);
        }
    }
}
