use super::EstimatorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    DeadReckoning,
    Ekf,
    IteratedEkf,
    SlidingWindow,
    Msckf,
    IteratedMsckf,
    Keyframe,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::DeadReckoning => "dead-reckoning",
            Self::Ekf => "ekf",
            Self::IteratedEkf => "iekf",
            Self::SlidingWindow => "swf",
            Self::Msckf => "msckf",
            Self::IteratedMsckf => "imsckf",
            Self::Keyframe => "keyframe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "dead-reckoning" | "dr" => Self::DeadReckoning,
            "ekf" => Self::Ekf,
            "iekf" => Self::IteratedEkf,
            "swf" => Self::SlidingWindow,
            "msckf" => Self::Msckf,
            "imsckf" => Self::IteratedMsckf,
            "keyframe" | "okvis" => Self::Keyframe,
            _ => return None,
        })
    }
}

/// Which formulation of the filter sub-steps to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Form {
    /// Closed-form Kalman updates.
    Classical,
    /// Gauss-Newton and marginalization on the running cost.
    #[default]
    Optimization,
}

/// What happens to a landmark when the frame holding its last
/// measurements leaves the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeaturePolicy {
    /// Landmarks stay in the state forever (EKF SLAM).
    KeepAll,
    /// Landmarks whose measurements all sit on the departing frame are
    /// marginalized with it.
    MarginalizeWithFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSchedule {
    pub kind: EstimatorKind,
    pub form: Form,
    /// Recent-frame window (SWF `n`, keyframe `n`).
    pub window: usize,
    /// Keyframe window `k`.
    pub keyframes: usize,
    /// Keyframe promotion threshold on the matched-landmark ratio.
    pub match_threshold: f64,
    /// MSCKF pose bound `N_max`. Pose selection fires once the window holds
    /// `N_max − 1` poses, so that is the largest window the filter keeps.
    pub max_poses: usize,
    pub gn_iters: usize,
    pub step_tolerance: f64,
    pub feature_policy: FeaturePolicy,
    /// Regularization of the optimization-form pose augmentation.
    pub augment_epsilon: f64,
}

impl EstimatorSchedule {
    fn base(kind: EstimatorKind) -> Self {
        Self {
            kind,
            form: Form::Optimization,
            window: 1,
            keyframes: 0,
            match_threshold: 0.6,
            max_poses: 6,
            gn_iters: 1,
            step_tolerance: 1e-9,
            feature_policy: FeaturePolicy::MarginalizeWithFrame,
            augment_epsilon: 1e-9,
        }
    }

    pub fn dead_reckoning() -> Self {
        Self::base(EstimatorKind::DeadReckoning)
    }

    pub fn ekf() -> Self {
        Self { feature_policy: FeaturePolicy::KeepAll, ..Self::base(EstimatorKind::Ekf) }
    }

    pub fn iekf() -> Self {
        Self { gn_iters: 10, feature_policy: FeaturePolicy::KeepAll, ..Self::base(EstimatorKind::IteratedEkf) }
    }

    pub fn swf(n: usize) -> Self {
        Self { window: n, gn_iters: 5, ..Self::base(EstimatorKind::SlidingWindow) }
    }

    /// MSCKF whose window grows to `n` cloned poses (`N_max = n + 1`).
    pub fn msckf(n: usize) -> Self {
        Self { max_poses: n + 1, form: Form::Classical, ..Self::base(EstimatorKind::Msckf) }
    }

    pub fn imsckf(n: usize) -> Self {
        Self { max_poses: n + 1, gn_iters: 10, ..Self::base(EstimatorKind::IteratedMsckf) }
    }

    pub fn keyframe(n: usize, k: usize) -> Self {
        Self { window: n, keyframes: k, gn_iters: 5, ..Self::base(EstimatorKind::Keyframe) }
    }

    pub fn preset(kind: EstimatorKind) -> Self {
        match kind {
            EstimatorKind::DeadReckoning => Self::dead_reckoning(),
            EstimatorKind::Ekf => Self::ekf(),
            EstimatorKind::IteratedEkf => Self::iekf(),
            EstimatorKind::SlidingWindow => Self::swf(5),
            EstimatorKind::Msckf => Self::msckf(5),
            EstimatorKind::IteratedMsckf => Self::imsckf(5),
            EstimatorKind::Keyframe => Self::keyframe(3, 5),
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::Configuration(m.to_string()));
        if self.gn_iters == 0 {
            return bad("gn_iters must be at least 1");
        }
        match self.kind {
            EstimatorKind::SlidingWindow | EstimatorKind::Keyframe if self.window == 0 => {
                bad("window n must be at least 1")
            }
            EstimatorKind::Msckf | EstimatorKind::IteratedMsckf if self.max_poses < 3 => {
                bad("MSCKF pose bound must be at least 3")
            }
            EstimatorKind::Keyframe if !(0.0..=1.0).contains(&self.match_threshold) => {
                bad("match threshold must lie in [0, 1]")
            }
            _ if !(self.augment_epsilon > 0.0) => bad("augmentation epsilon must be positive"),
            _ => Ok(()),
        }
    }
}
