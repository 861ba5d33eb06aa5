//! Trajectory evaluation: timestamp association, rigid (scale-free)
//! Umeyama alignment, translation/rotation RMSE and drift against distance
//! travelled.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::manifold::{vee, ManifoldPoint};

/// Maximum timestamp gap for associating an estimate with ground truth.
pub const ASSOCIATION_TOLERANCE: f64 = 0.01;
/// Distance between drift milestones, metres.
pub const DRIFT_INTERVAL: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no estimate lies within {0} s of a ground-truth timestamp")]
    EmptyAssociation(f64),
    #[error("alignment needs at least 3 non-collinear positions: {0}")]
    Degenerate(String),
    #[error("unsupported state layout for evaluation")]
    Layout,
    #[error("timestamps must be strictly increasing (index {0})")]
    Timestamps(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub t: f64,
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
}

impl Trajectory {
    /// Reads planar `(x, y, θ)`, spatial `(q, r)` and IMU `(q, v, b_g, b_a, r)` points.
    pub fn from_points(points: &[(f64, ManifoldPoint)]) -> Result<Self, MetricsError> {
        let mut poses = Vec::with_capacity(points.len());
        for (i, (t, p)) in points.iter().enumerate() {
            if i > 0 && *t <= points[i - 1].0 {
                return Err(MetricsError::Timestamps(i));
            }
            poses.push(pose_of(*t, p)?);
        }
        Ok(Self { poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn transformed(&self, a: &Alignment) -> Self {
        let poses = self
            .poses
            .iter()
            .map(|p| Pose { t: p.t, position: a.apply(&p.position), rotation: a.rotation * p.rotation })
            .collect();
        Self { poses }
    }
}

fn pose_of(t: f64, p: &ManifoldPoint) -> Result<Pose, MetricsError> {
    let v3 = |v: &nalgebra::DVector<f64>| Vector3::new(v[0], v[1], v[2]);
    match p {
        ManifoldPoint::Euclidean(x) if x.len() == 3 => {
            let (s, c) = x[2].sin_cos();
            let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
            Ok(Pose { t, position: Vector3::new(x[0], x[1], 0.0), rotation })
        }
        ManifoldPoint::Product(parts) => {
            let pos = match parts.len() {
                2 => &parts[1],
                5 => &parts[4],
                _ => return Err(MetricsError::Layout),
            };
            match (&parts[0], pos) {
                (ManifoldPoint::Quaternion(q), ManifoldPoint::Euclidean(r)) if r.len() == 3 => {
                    Ok(Pose { t, position: v3(r), rotation: q.to_rotation_matrix() })
                }
                _ => Err(MetricsError::Layout),
            }
        }
        _ => Err(MetricsError::Layout),
    }
}

/// Index pairs `(estimate, truth)` matched by nearest timestamp within `tol`.
pub fn associate(est: &Trajectory, gt: &Trajectory, tol: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut j = 0;
    for (i, p) in est.poses.iter().enumerate() {
        while j + 1 < gt.poses.len() && (gt.poses[j + 1].t - p.t).abs() <= (gt.poses[j].t - p.t).abs() {
            j += 1;
        }
        if let Some(g) = gt.poses.get(j) {
            if (g.t - p.t).abs() <= tol {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Rigid transform `x ↦ R x + t` with `det R = +1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Alignment {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }
}

/// Least-squares rigid transform taking `src` onto `dst`, with the
/// reflection correction on the cross-covariance SVD.
pub fn umeyama_align(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Alignment, MetricsError> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(MetricsError::Degenerate(format!("{} associated positions", src.len().min(dst.len()))));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cross = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cross += (d - mu_d) * (s - mu_s).transpose();
        spread += (s - mu_s) * (s - mu_s).transpose();
    }
    let sv = spread.symmetric_eigenvalues();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted[0] <= 0.0 || sorted[1] <= 1e-12 * sorted[0] {
        return Err(MetricsError::Degenerate("positions are collinear or coincident".into()));
    }
    let svd = (cross / n).svd(true, true);
    let (u, vt) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let mut s = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * vt;
    Ok(Alignment { rotation, translation: mu_d - rotation * mu_s })
}

/// Angle of a rotation matrix, accurate near zero and near π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let sin = vee(&(r - r.transpose())).norm() * 0.5;
    let cos = (r.trace() - 1.0) * 0.5;
    sin.atan2(cos)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rmse {
    pub translation: f64,
    /// Degrees.
    pub rotation: f64,
}

pub fn rmse(est: &Trajectory, gt: &Trajectory, pairs: &[(usize, usize)]) -> Result<Rmse, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyAssociation(ASSOCIATION_TOLERANCE));
    }
    let (mut st, mut sr) = (0.0, 0.0);
    for &(i, j) in pairs {
        let (e, g) = (&est.poses[i], &gt.poses[j]);
        st += (e.position - g.position).norm_squared();
        sr += rotation_angle(&(g.rotation.transpose() * e.rotation)).powi(2);
    }
    let n = pairs.len() as f64;
    Ok(Rmse { translation: (st / n).sqrt(), rotation: (sr / n).sqrt().to_degrees() })
}

/// Position error at every `interval` metres of ground-truth arc length,
/// interpolated linearly between associated poses.
pub fn drift_curve(est: &Trajectory, gt: &Trajectory, pairs: &[(usize, usize)], interval: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if pairs.is_empty() || interval <= 0.0 {
        return out;
    }
    let err = |k: usize| est.poses[pairs[k].0].position - gt.poses[pairs[k].1].position;
    let mut s = 0.0;
    let mut milestone = interval;
    for k in 1..pairs.len() {
        let step = (gt.poses[pairs[k].1].position - gt.poses[pairs[k - 1].1].position).norm();
        while step > 0.0 && s + step >= milestone - 1e-12 {
            let w = ((milestone - s) / step).clamp(0.0, 1.0);
            let e = err(k - 1) * (1.0 - w) + err(k) * w;
            out.push((milestone, e.norm()));
            milestone += interval;
        }
        s += step;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub matched: usize,
    /// False when the associated positions were too degenerate to align.
    pub aligned: bool,
    pub alignment: Alignment,
    pub rmse: Rmse,
    pub drift: Vec<(f64, f64)>,
}

/// Associates, aligns over the full trajectory and scores `est` against `gt`.
pub fn evaluate(est: &Trajectory, gt: &Trajectory) -> Result<Evaluation, MetricsError> {
    let pairs = associate(est, gt, ASSOCIATION_TOLERANCE);
    if pairs.is_empty() {
        return Err(MetricsError::EmptyAssociation(ASSOCIATION_TOLERANCE));
    }
    let src: Vec<_> = pairs.iter().map(|&(i, _)| est.poses[i].position).collect();
    let dst: Vec<_> = pairs.iter().map(|&(_, j)| gt.poses[j].position).collect();
    let (alignment, aligned) = match umeyama_align(&src, &dst) {
        Ok(a) => (a, true),
        Err(MetricsError::Degenerate(reason)) => {
            log::warn!("alignment skipped: {reason}");
            (Alignment::identity(), false)
        }
        Err(e) => return Err(e),
    };
    let moved = est.transformed(&alignment);
    Ok(Evaluation {
        matched: pairs.len(),
        aligned,
        alignment,
        rmse: rmse(&moved, gt, &pairs)?,
        drift: drift_curve(&moved, gt, &pairs, DRIFT_INTERVAL),
    })
}
