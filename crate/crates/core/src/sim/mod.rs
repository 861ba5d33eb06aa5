//! Synthetic worlds: a planar unicycle on a circle observing point
//! landmarks, and an IMU with a stereo camera orbiting inside a cylinder of
//! landmarks. Everything is a pure function of the configuration and seed.

mod planar;
mod stereo;

pub use planar::{gen_trajectory_2d, measure_planar, PlanarConfig};
pub use stereo::{camera_extrinsics, measure_stereo, StereoConfig};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

use crate::estimators::Problem;
use crate::factors::FactorError;
use crate::imu::ImuSample;
use crate::manifold::ManifoldPoint;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimModel {
    Planar2d,
    Stereo3d,
}

impl SimModel {
    pub fn name(self) -> &'static str {
        match self {
            Self::Planar2d => "planar2d",
            Self::Stereo3d => "stereo3d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "planar2d" => Some(Self::Planar2d),
            "stereo3d" => Some(Self::Stereo3d),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimConfig {
    Planar(PlanarConfig),
    Stereo(StereoConfig),
}

impl SimConfig {
    pub fn model(&self) -> SimModel {
        match self {
            Self::Planar(_) => SimModel::Planar2d,
            Self::Stereo(_) => SimModel::Stereo3d,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::Planar(c) => c.seed,
            Self::Stereo(c) => c.seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            Self::Planar(c) => c.validate(),
            Self::Stereo(c) => c.validate(),
        }
    }
}

/// One landmark measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub t: f64,
    pub frame: usize,
    pub feature: u64,
    pub z: DVector<f64>,
}

/// Generated or loaded dataset. `truth[k]` is the ground-truth pose at frame
/// `k`: `(x, y, θ)` for the planar model, `(q_WI, r_WI)` for the stereo one.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SimConfig,
    pub landmarks: Vec<(u64, DVector<f64>)>,
    pub truth: Vec<(f64, ManifoldPoint)>,
    pub imu: Vec<ImuSample>,
    pub tracks: Vec<Track>,
}

impl Dataset {
    pub fn frame_count(&self) -> usize {
        self.truth.len()
    }

    /// Estimation problem posed by the dataset: sensor models, prior and
    /// per-frame dynamics and observations.
    pub fn problem(&self) -> Result<Problem, SimError> {
        self.config.validate()?;
        if self.truth.is_empty() {
            return Err(SimError::Data("no ground-truth frames".into()));
        }
        if let Some(t) = self.tracks.iter().find(|t| t.frame >= self.truth.len()) {
            return Err(SimError::Data(format!("track of feature {} references missing frame {}", t.feature, t.frame)));
        }
        match &self.config {
            SimConfig::Planar(c) => planar::problem(c, self),
            SimConfig::Stereo(c) => stereo::problem(c, self),
        }
    }
}

/// Generates the dataset for `config`.
pub fn gen_dataset(config: &SimConfig) -> Result<Dataset, SimError> {
    config.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed());
    match config {
        SimConfig::Planar(c) => planar::generate(c, &mut rng),
        SimConfig::Stereo(c) => stereo::generate(c, &mut rng),
    }
}

/// Noise level handed to estimators in place of a zero sigma, so noise-free
/// datasets still have invertible residual weights. Large enough to keep the
/// covariance well conditioned next to the default priors.
pub const NOISE_FREE_MODEL_SIGMA: f64 = 1e-4;

fn model_sigma(s: f64) -> f64 {
    if s > 0.0 {
        s
    } else {
        NOISE_FREE_MODEL_SIGMA
    }
}

fn check_sigma(name: &str, v: f64) -> Result<(), SimError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(SimError::Config(format!("{name} must be finite and non-negative, got {v}")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), SimError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(SimError::Config(format!("{name} must be positive, got {v}")))
    }
}
