//! Multi-view feature initialization at fixed poses.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::factors::models::MeasurementModel;
use crate::manifold::ManifoldPoint;

pub const MIN_BASELINE: f64 = 1e-6;
const MAX_ITERATIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TriangulationError {
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("baseline {0:e} m is degenerate")]
    Degenerate(f64),
    #[error("triangulation failed: {0}")]
    Failed(String),
}

fn position(pose: &ManifoldPoint) -> Option<DVector<f64>> {
    match pose {
        ManifoldPoint::Euclidean(v) if v.len() >= 2 => Some(v.rows(0, 2).into_owned()),
        ManifoldPoint::Product(parts) => parts.get(1).and_then(|p| p.as_euclidean()).cloned(),
        _ => None,
    }
}

fn baseline(poses: &[&ManifoldPoint]) -> Result<f64, TriangulationError> {
    let ps: Vec<DVector<f64>> = poses
        .iter()
        .map(|p| position(p).ok_or_else(|| TriangulationError::Failed("unsupported pose type".into())))
        .collect::<Result<_, _>>()?;
    let mut best = 0.0f64;
    for i in 0..ps.len() {
        for j in i + 1..ps.len() {
            best = best.max((&ps[i] - &ps[j]).norm());
        }
    }
    Ok(best)
}

/// Linear initialization for normalized pinhole observations: each view
/// contributes `(u e₃ − e₁)ᵀ Rᵀ (f − r) = 0` and the same for `v`.
fn pinhole_linear(obs: &[(&ManifoldPoint, &DVector<f64>)]) -> Result<DVector<f64>, TriangulationError> {
    let mut a = DMatrix::zeros(2 * obs.len(), 3);
    let mut b = DVector::zeros(2 * obs.len());
    for (k, (pose, z)) in obs.iter().enumerate() {
        let (q, r) = match (pose.component(0), pose.component(1)) {
            (Some(ManifoldPoint::Quaternion(q)), Some(ManifoldPoint::Euclidean(r))) => {
                (*q, Vector3::new(r[0], r[1], r[2]))
            }
            _ => return Err(TriangulationError::Failed("pose must be (quaternion, position)".into())),
        };
        let rt: Matrix3<f64> = q.to_rotation_matrix().transpose();
        for (row, coord) in [(0usize, z[0]), (1, z[1])] {
            let mut e = Vector3::zeros();
            e[2] = coord;
            e[row] -= 1.0;
            let a_row = rt.transpose() * e;
            for c in 0..3 {
                a[(2 * k + row, c)] = a_row[c];
            }
            b[2 * k + row] = a_row.dot(&r);
        }
    }
    let svd = crate::optimizer::checked_svd(&a);
    svd.solve(&b, 1e-12).map_err(|e| TriangulationError::Failed(e.to_string()))
}

/// Feature position seen from fixed `poses` with measurements `zs`: linear
/// initialization, then at most 10 Gauss-Newton steps on the whitened
/// measurement residuals.
pub fn triangulate(
    model: &dyn MeasurementModel,
    poses: &[&ManifoldPoint],
    zs: &[&DVector<f64>],
) -> Result<DVector<f64>, TriangulationError> {
    if poses.len() < 2 || poses.len() != zs.len() {
        return Err(TriangulationError::TooFewObservations(poses.len().min(zs.len())));
    }
    let b = baseline(poses)?;
    if b <= MIN_BASELINE {
        return Err(TriangulationError::Degenerate(b));
    }
    let fail = |e: crate::factors::FactorError| TriangulationError::Failed(e.to_string());

    let mut f = if model.inverse(poses[0], zs[0]).is_some() {
        let mut acc = DVector::zeros(model.feature_dim());
        for (p, z) in poses.iter().zip(zs) {
            acc += model.inverse(p, z).expect("invertible model").map_err(fail)?;
        }
        acc / poses.len() as f64
    } else {
        let obs: Vec<_> = poses.iter().copied().zip(zs.iter().copied()).collect();
        pinhole_linear(&obs)?
    };

    let w = crate::factors::sqrt_info_from_covariance(&model.noise_covariance()).map_err(fail)?;
    let dz = model.measurement_dim();
    let df = model.feature_dim();
    for _ in 0..MAX_ITERATIONS {
        let mut j = DMatrix::zeros(dz * poses.len(), df);
        let mut c = DVector::zeros(dz * poses.len());
        for (k, (p, z)) in poses.iter().zip(zs).enumerate() {
            let r = model.predict(p, &f).map_err(fail)? - *z;
            let (_, hf) = model.jacobians(p, &f).map_err(fail)?;
            c.rows_mut(k * dz, dz).copy_from(&(&w * r));
            j.view_mut((k * dz, 0), (dz, df)).copy_from(&(&w * hf));
        }
        let svd = crate::optimizer::checked_svd(&j);
        let step = svd.solve(&(-c), 1e-12).map_err(|e| TriangulationError::Failed(e.to_string()))?;
        f += &step;
        if step.amax() < 1e-12 * (1.0 + f.amax()) {
            break;
        }
    }
    if f.iter().all(|v| v.is_finite()) && poses.iter().all(|p| model.predict(p, &f).is_ok()) {
        Ok(f)
    } else {
        Err(TriangulationError::Failed("non-finite or invalid solution".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::models::{spatial_pose_point, PinholeNormalized, PlanarTranslation, StereoPinhole};
    use crate::manifold::UnitQuaternion;

    #[test]
    fn planar_translation_averages_back_projections() {
        let model = PlanarTranslation::isotropic(0.1);
        let p0 = ManifoldPoint::euclidean(&[0.0, 0.0, 0.0]);
        let p1 = ManifoldPoint::euclidean(&[1.0, 0.0, 0.3]);
        let z0 = DVector::from_vec(vec![2.0, 1.0]);
        let z1 = DVector::from_vec(vec![1.2, 0.9]);
        let f = triangulate(&model, &[&p0, &p1], &[&z0, &z1]).unwrap();
        // Back-projections (2, 1) and (2.2, 0.9).
        assert!((f[0] - 2.1).abs() < 1e-12 && (f[1] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn pinhole_recovers_exact_point() {
        let model = PinholeNormalized::isotropic(1e-3);
        let truth = DVector::from_vec(vec![0.3, -0.2, 4.0]);
        let poses = [
            spatial_pose_point(UnitQuaternion::identity(), Vector3::zeros()),
            spatial_pose_point(UnitQuaternion::exp(&Vector3::new(0.0, 0.05, 0.0)).unwrap(), Vector3::new(0.5, 0.0, 0.0)),
            spatial_pose_point(UnitQuaternion::exp(&Vector3::new(0.02, 0.0, 0.0)).unwrap(), Vector3::new(0.0, 0.4, 0.1)),
        ];
        let zs: Vec<_> = poses.iter().map(|p| model.predict(p, &truth).unwrap()).collect();
        let f = triangulate(&model, &poses.iter().collect::<Vec<_>>(), &zs.iter().collect::<Vec<_>>()).unwrap();
        assert!((f - truth).norm() < 1e-8);
    }

    #[test]
    fn stereo_recovers_exact_point() {
        let model = StereoPinhole { fx: 450.0, fy: 450.0, cx: 320.0, cy: 240.0, baseline: 0.11, sigma_px: 0.05 };
        let truth = DVector::from_vec(vec![1.0, 0.5, 6.0]);
        let poses = [
            spatial_pose_point(UnitQuaternion::identity(), Vector3::zeros()),
            spatial_pose_point(UnitQuaternion::identity(), Vector3::new(0.3, 0.0, 0.0)),
        ];
        let zs: Vec<_> = poses.iter().map(|p| model.predict(p, &truth).unwrap()).collect();
        let f = triangulate(&model, &poses.iter().collect::<Vec<_>>(), &zs.iter().collect::<Vec<_>>()).unwrap();
        assert!((f - truth).norm() < 1e-8);
    }

    #[test]
    fn single_observation_is_rejected() {
        let model = PlanarTranslation::isotropic(0.1);
        let p = ManifoldPoint::euclidean(&[0.0, 0.0, 0.0]);
        let z = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(triangulate(&model, &[&p], &[&z]), Err(TriangulationError::TooFewObservations(1)));
    }

    #[test]
    fn coincident_poses_are_degenerate() {
        let model = PlanarTranslation::isotropic(0.1);
        let p = ManifoldPoint::euclidean(&[1.0, 1.0, 0.0]);
        let z = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(triangulate(&model, &[&p, &p], &[&z, &z]), Err(TriangulationError::Degenerate(_))));
    }
}
