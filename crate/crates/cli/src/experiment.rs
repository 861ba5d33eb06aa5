//! Experiment configuration, estimator runs and result emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use slamkit::estimators::{run, EstimatorError, EstimatorKind, EstimatorSchedule, FeaturePolicy, Form, Problem, RunOutput};
use slamkit::metrics::{evaluate, Trajectory};
use slamkit::sim::{gen_dataset, Dataset, SimConfig};

use crate::dataset::{load_dataset, write_trajectory};
use crate::error::{io_error, usage, CliError, DataError};
use crate::formats::{num, write_table, KeyValues};
use crate::simconfig;

pub const METRICS_SCHEMA: &str = "slamkit-metrics/1";
pub const SUMMARY_SCHEMA: &str = "slamkit-trials/1";

pub const ESTIMATE_FILE: &str = "estimate.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const DRIFT_FILE: &str = "drift.csv";
pub const LOG_FILE: &str = "run.log";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub estimator: EstimatorKind,
    /// Window size: SWF `n`, MSCKF window `n` (so `N_max = n + 1`), keyframe `n`.
    pub n: Option<usize>,
    /// Keyframe count.
    pub k: Option<usize>,
    /// MSCKF pose bound `N_max`, overriding the one implied by `n`.
    pub max_poses: Option<usize>,
    pub gn_iters: Option<usize>,
    /// Measurement noise the estimator assumes (pixels for stereo).
    pub measurement_sigma: Option<f64>,
    /// Factor on the process (or IMU) noise the estimator assumes.
    pub process_scale: Option<f64>,
    /// Dataset directory; without one the dataset is simulated from `sim`.
    pub dataset: Option<PathBuf>,
    pub sim: SimConfig,
    pub output: PathBuf,
    /// Seed of the simulated dataset; trial `i` uses `seed + i`.
    pub seed: u64,
    pub trials: usize,
}

impl ExperimentConfig {
    pub fn new(estimator: EstimatorKind, output: impl Into<PathBuf>) -> Self {
        Self {
            estimator,
            n: None,
            k: None,
            max_poses: None,
            gn_iters: None,
            measurement_sigma: None,
            process_scale: None,
            dataset: None,
            sim: simconfig::defaults(slamkit::sim::SimModel::Planar2d),
            output: output.into(),
            seed: 42,
            trials: 1,
        }
    }

    /// Applies `key=value` settings. Simulator fields take a `sim.` prefix.
    pub fn apply(&mut self, key: &str, v: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value '{v}' for {key}"))
        }
        match key {
            "estimator" => self.estimator = EstimatorKind::parse(v).ok_or_else(|| format!("unknown estimator '{v}'"))?,
            "n" => self.n = Some(parse(key, v)?),
            "k" => self.k = Some(parse(key, v)?),
            "max_poses" => self.max_poses = Some(parse(key, v)?),
            "gn_iters" => self.gn_iters = Some(parse(key, v)?),
            "measurement_sigma" => self.measurement_sigma = Some(parse(key, v)?),
            "process_scale" => self.process_scale = Some(parse(key, v)?),
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            "output" => self.output = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "trials" => self.trials = parse(key, v)?,
            "sim.model" => {
                let model = simconfig::parse_model(v)?;
                if model != self.sim.model() {
                    self.sim = simconfig::defaults(model);
                }
            }
            _ => match key.strip_prefix("sim.") {
                Some("seed") => return Err("set the simulation seed with 'seed'".into()),
                Some(field) => simconfig::set(&mut self.sim, field, v)?,
                None => return Err(format!("unknown experiment key '{key}'")),
            },
        }
        Ok(())
    }

    /// Applies a config file. `sim.model` is applied first so the other
    /// `sim.` keys land on the right defaults.
    pub fn apply_file(&mut self, kv: &KeyValues, path: &Path) -> Result<(), CliError> {
        let ordered = kv.entries.iter().filter(|e| e.0 == "sim.model").chain(kv.entries.iter().filter(|e| e.0 != "sim.model"));
        for (k, v, line) in ordered {
            self.apply(k, v).map_err(|m| DataError::at(path, *line, m))?;
        }
        Ok(())
    }

    /// Schedule for the chosen estimator. Parameters that do not apply to it
    /// are usage errors.
    pub fn schedule(&self) -> Result<EstimatorSchedule, CliError> {
        use EstimatorKind::*;
        let kind = self.estimator;
        let reject = |flag: &str, set: bool| {
            if set {
                Err(usage(format!("--{flag} does not apply to {}", kind.name())))
            } else {
                Ok(())
            }
        };
        let (n, k, m, g) = (self.n.is_some(), self.k.is_some(), self.max_poses.is_some(), self.gn_iters.is_some());
        let mut s = match kind {
            DeadReckoning | Ekf => {
                reject("n", n)?;
                reject("k", k)?;
                reject("max-poses", m)?;
                reject("gn-iters", g)?;
                if kind == Ekf { EstimatorSchedule::ekf() } else { EstimatorSchedule::dead_reckoning() }
            }
            IteratedEkf => {
                reject("n", n)?;
                reject("k", k)?;
                reject("max-poses", m)?;
                EstimatorSchedule::iekf()
            }
            SlidingWindow => {
                reject("k", k)?;
                reject("max-poses", m)?;
                EstimatorSchedule::swf(self.n.unwrap_or(5))
            }
            Msckf => {
                reject("k", k)?;
                reject("gn-iters", g)?;
                EstimatorSchedule::msckf(self.n.unwrap_or(5))
            }
            IteratedMsckf => {
                reject("k", k)?;
                EstimatorSchedule::imsckf(self.n.unwrap_or(5))
            }
            Keyframe => {
                reject("max-poses", m)?;
                EstimatorSchedule::keyframe(self.n.unwrap_or(3), self.k.unwrap_or(5))
            }
        };
        if let Some(m) = self.max_poses {
            s.max_poses = m;
        }
        if let Some(g) = self.gn_iters {
            s.gn_iters = g;
        }
        s.validate().map_err(|e| usage(e.to_string()))?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<EstimatorSchedule, CliError> {
        if self.trials == 0 {
            return Err(usage("--trials must be at least 1"));
        }
        if self.dataset.is_some() && self.trials > 1 {
            return Err(usage("--trials > 1 needs a simulated dataset, not --dataset"));
        }
        for (name, v) in [("measurement-sigma", self.measurement_sigma), ("process-scale", self.process_scale)] {
            if v.is_some_and(|v| !(v.is_finite() && v >= 0.0)) {
                return Err(usage(format!("--{name} must be finite and non-negative")));
            }
        }
        self.schedule()
    }

    /// Estimator-side noise model: the dataset config with overrides.
    fn model_config(&self, config: &SimConfig) -> SimConfig {
        let mut c = config.clone();
        match &mut c {
            SimConfig::Planar(p) => {
                if let Some(s) = self.measurement_sigma {
                    p.measurement_sigma = s;
                }
                if let Some(f) = self.process_scale {
                    p.process_sigma = p.process_sigma.map(|s| s * f);
                }
            }
            SimConfig::Stereo(p) => {
                if let Some(s) = self.measurement_sigma {
                    p.sigma_px = s;
                }
                if let Some(f) = self.process_scale {
                    p.imu_noise.gyro *= f;
                    p.imu_noise.accel *= f;
                    p.imu_noise.gyro_bias *= f;
                    p.imu_noise.accel_bias *= f;
                }
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorInfo {
    pub kind: String,
    pub form: String,
    pub window: usize,
    pub keyframes: usize,
    pub max_poses: usize,
    pub gn_iters: usize,
    pub feature_policy: String,
}

impl EstimatorInfo {
    fn new(s: &EstimatorSchedule) -> Self {
        Self {
            kind: s.kind.name().into(),
            form: match s.form {
                Form::Classical => "classical",
                Form::Optimization => "optimization",
            }
            .into(),
            window: s.window,
            keyframes: s.keyframes,
            max_poses: s.max_poses,
            gn_iters: s.gn_iters,
            feature_policy: match s.feature_policy {
                FeaturePolicy::KeepAll => "keep_all",
                FeaturePolicy::MarginalizeWithFrame => "marginalize_with_frame",
            }
            .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub model: String,
    pub seed: u64,
    pub frames: usize,
    pub tracks: usize,
    pub imu_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseInfo {
    pub translation_m: f64,
    pub rotation_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub frame: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsInfo {
    pub gn_iterations: usize,
    pub marginalizations: usize,
    pub features_processed: usize,
    pub features_dropped: usize,
    pub peak_window: usize,
}

/// One run's metrics; the layout is documented in `docs/metrics.md`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema: String,
    pub trial: usize,
    pub estimator: EstimatorInfo,
    pub dataset: DatasetInfo,
    pub frames_estimated: usize,
    pub diverged: bool,
    pub divergence: Option<Divergence>,
    pub aligned: bool,
    pub matched: usize,
    pub rmse: Option<RmseInfo>,
    pub stats: StatsInfo,
    pub runtime_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub schema: String,
    pub trials: usize,
    pub diverged: usize,
    pub mean_rmse: Option<RmseInfo>,
    pub runtime_sec: f64,
    pub runs: Vec<Metrics>,
}

/// Result of [`run_experiment`]: per-trial metrics in trial order.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub metrics: Vec<Metrics>,
    pub summary: Option<TrialSummary>,
}

impl ExperimentResult {
    pub fn diverged(&self) -> Vec<&Metrics> {
        self.metrics.iter().filter(|m| m.diverged).collect()
    }
}

/// Runs the estimator, keeping the causal prefix when it diverges.
pub fn run_partial(problem: &Problem, schedule: &EstimatorSchedule) -> Result<(RunOutput, Option<Divergence>), CliError> {
    let empty = || RunOutput { estimates: Vec::new(), stats: Default::default() };
    match run(problem, schedule) {
        Ok(out) => Ok((out, None)),
        Err(EstimatorError::Configuration(m)) => Err(usage(m)),
        Err(EstimatorError::Divergence { frame, reason }) => {
            // Every estimator emits frame k's estimate before touching frame
            // k + 1, so a run over the frames before the failure reproduces
            // the output up to it.
            let keep = problem.frames.iter().position(|f| f.index == frame).unwrap_or(0);
            let out = match keep {
                0 => empty(),
                _ => {
                    let prefix = Problem { frames: problem.frames[..keep].to_vec(), ..problem.clone() };
                    run(&prefix, schedule).unwrap_or_else(|_| empty())
                }
            };
            Ok((out, Some(Divergence { frame: Some(frame), reason })))
        }
        Err(e) => Ok((empty(), Some(Divergence { frame: None, reason: e.to_string() }))),
    }
}

fn dataset_for_trial(cfg: &ExperimentConfig, trial: usize) -> Result<Dataset, CliError> {
    match &cfg.dataset {
        Some(dir) => load_dataset(dir),
        None => {
            let mut sim = cfg.sim.clone();
            let seed = cfg.seed.wrapping_add(trial as u64);
            match &mut sim {
                SimConfig::Planar(c) => c.seed = seed,
                SimConfig::Stereo(c) => c.seed = seed,
            }
            gen_dataset(&sim).map_err(|e| usage(e.to_string()))
        }
    }
}

fn run_trial(cfg: &ExperimentConfig, schedule: &EstimatorSchedule, trial: usize, dir: &Path) -> Result<Metrics, CliError> {
    let dataset = dataset_for_trial(cfg, trial)?;
    let model_config = cfg.model_config(&dataset.config);
    model_config.validate().map_err(|e| usage(e.to_string()))?;
    let posed = Dataset { config: model_config, ..dataset.clone() };
    let problem = posed.problem().map_err(|e| DataError::new(cfg.dataset.as_deref().unwrap_or(Path::new("<simulated>")), e.to_string()))?;

    let start = Instant::now();
    let (out, mut divergence) = run_partial(&problem, schedule)?;
    let runtime_sec = start.elapsed().as_secs_f64();

    let gt = Trajectory::from_points(&dataset.truth).map_err(|e| usage(e.to_string()))?;
    let evaluation = Trajectory::from_points(&out.estimates).ok().and_then(|est| evaluate(&est, &gt).ok());
    if divergence.is_none() && evaluation.as_ref().is_some_and(|e| !(e.rmse.translation.is_finite() && e.rmse.rotation.is_finite())) {
        divergence = Some(Divergence { frame: None, reason: "error metrics are not finite".into() });
    }
    let s = &out.stats;
    let metrics = Metrics {
        schema: METRICS_SCHEMA.into(),
        trial,
        estimator: EstimatorInfo::new(schedule),
        dataset: DatasetInfo {
            model: dataset.config.model().name().into(),
            seed: dataset.config.seed(),
            frames: dataset.truth.len(),
            tracks: dataset.tracks.len(),
            imu_samples: dataset.imu.len(),
        },
        frames_estimated: out.estimates.len(),
        diverged: divergence.is_some(),
        divergence,
        aligned: evaluation.as_ref().is_some_and(|e| e.aligned),
        matched: evaluation.as_ref().map_or(0, |e| e.matched),
        rmse: evaluation.as_ref().map(|e| RmseInfo { translation_m: e.rmse.translation, rotation_deg: e.rmse.rotation }),
        stats: StatsInfo {
            gn_iterations: s.gn_iterations,
            marginalizations: s.marginalizations,
            features_processed: s.features_processed,
            features_dropped: s.features_dropped,
            peak_window: s.peak_window,
        },
        runtime_sec,
    };

    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    write_trajectory(&dir.join(ESTIMATE_FILE), "estimate", dataset.config.model(), &out.estimates)?;
    let drift: Vec<Vec<String>> = evaluation.as_ref().map_or(Vec::new(), |e| e.drift.iter().map(|(d, x)| vec![num(*d), num(*x)]).collect());
    write_table(&dir.join(DRIFT_FILE), "drift", &["distance_m", "drift_m"], &drift)?;
    write_json(&dir.join(METRICS_FILE), &metrics)?;
    fs::write(dir.join(LOG_FILE), run_log(&metrics)).map_err(|e| io_error(&dir.join(LOG_FILE), e))?;
    Ok(metrics)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DataError::new(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Human-readable record of a run. Holds no timing, so it is reproducible.
fn run_log(m: &Metrics) -> String {
    let mut s = String::new();
    let e = &m.estimator;
    let _ = writeln!(s, "slamkit {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "trial {}", m.trial);
    let _ = writeln!(
        s,
        "estimator {} form={} window={} keyframes={} max_poses={} gn_iters={} features={}",
        e.kind, e.form, e.window, e.keyframes, e.max_poses, e.gn_iters, e.feature_policy
    );
    let d = &m.dataset;
    let _ = writeln!(s, "dataset {} seed={} frames={} tracks={} imu_samples={}", d.model, d.seed, d.frames, d.tracks, d.imu_samples);
    let st = &m.stats;
    let _ = writeln!(
        s,
        "stats gn_iterations={} marginalizations={} features_processed={} features_dropped={} peak_window={}",
        st.gn_iterations, st.marginalizations, st.features_processed, st.features_dropped, st.peak_window
    );
    let _ = writeln!(s, "frames_estimated {}", m.frames_estimated);
    match &m.rmse {
        Some(r) => {
            let _ = writeln!(s, "rmse translation_m={} rotation_deg={} matched={} aligned={}", r.translation_m, r.rotation_deg, m.matched, m.aligned);
        }
        None => {
            let _ = writeln!(s, "rmse unavailable");
        }
    }
    match &m.divergence {
        Some(dv) => {
            let frame = dv.frame.map_or("?".to_string(), |f| f.to_string());
            let _ = writeln!(s, "status diverged frame={frame} reason={}", dv.reason);
        }
        None => {
            let _ = writeln!(s, "status ok");
        }
    }
    s
}

fn summarize(metrics: &[Metrics]) -> TrialSummary {
    let ok: Vec<&RmseInfo> = metrics.iter().filter(|m| !m.diverged).filter_map(|m| m.rmse.as_ref()).collect();
    let mean_rmse = (!ok.is_empty()).then(|| {
        let n = ok.len() as f64;
        RmseInfo {
            translation_m: ok.iter().map(|r| r.translation_m).sum::<f64>() / n,
            rotation_deg: ok.iter().map(|r| r.rotation_deg).sum::<f64>() / n,
        }
    });
    TrialSummary {
        schema: SUMMARY_SCHEMA.into(),
        trials: metrics.len(),
        diverged: metrics.iter().filter(|m| m.diverged).count(),
        mean_rmse,
        runtime_sec: metrics.iter().map(|m| m.runtime_sec).sum(),
        runs: metrics.to_vec(),
    }
}

/// Runs every trial (in parallel when there are several) and writes the
/// result bundle. Divergence is reported in the metrics, not as an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, CliError> {
    let schedule = cfg.validate()?;
    fs::create_dir_all(&cfg.output).map_err(|e| io_error(&cfg.output, e))?;
    if cfg.trials == 1 {
        let m = run_trial(cfg, &schedule, 0, &cfg.output)?;
        return Ok(ExperimentResult { metrics: vec![m], summary: None });
    }
    let metrics = (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, &schedule, i, &cfg.output.join(format!("trial_{i:03}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&metrics);
    write_json(&cfg.output.join(SUMMARY_FILE), &summary)?;
    Ok(ExperimentResult { metrics, summary: Some(summary) })
}
