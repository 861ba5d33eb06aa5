//! Command-line verbs. Flags are long-form only. Failures print one line
//! `error[<kind>]: <message>` to stderr and exit with 1 (usage), 2 (data) or
//! 3 (divergence or failed equivalence check).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use slamkit::estimators::equivalence::{self, EquivalenceKind, EquivalenceReport};
use slamkit::estimators::EstimatorKind;
use slamkit::metrics::{evaluate, Trajectory};
use slamkit::sim::gen_dataset;

use crate::dataset::{read_trajectory, save_dataset};
use crate::error::{usage, CliError, DataError};
use crate::experiment::{run_experiment, write_json, ExperimentConfig, Metrics, RmseInfo, METRICS_SCHEMA};
use crate::formats::{num, write_table, KeyValues, SCHEMA_VERSION};
use crate::simconfig;

/// `println!` that stays quiet when stdout is a closed pipe.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if let Err(e) = writeln!(std::io::stdout().lock(), $($arg)*) {
            if e.kind() != std::io::ErrorKind::BrokenPipe {
                eprintln!("warning: cannot write to stdout: {e}");
            }
        }
    }};
}

pub const EVAL_SCHEMA: &str = "slamkit-eval/1";

#[derive(Debug, Parser)]
#[command(name = "slamkit", about = "Filters and sliding-window smoothers on simulated SLAM datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset directory.
    Simulate(SimulateArgs),
    /// Run an estimator and write estimate, metrics, drift and log files.
    Run(RunArgs),
    /// Compare an estimate CSV against ground truth.
    Eval(EvalArgs),
    /// Check classical filter steps against their optimization forms.
    EquivCheck(EquivArgs),
    /// Print the program and schema versions.
    Version,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    /// planar2d or stereo3d.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// key=value file of simulator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One simulator setting, key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value experiment file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; omitted means simulate in memory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// dr, ekf, iekf, swf, msckf, imsckf or keyframe.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_poses: Option<usize>,
    #[arg(long)]
    gn_iters: Option<usize>,
    #[arg(long)]
    measurement_sigma: Option<f64>,
    #[arg(long)]
    process_scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Experiment setting, key=value (simulator fields as sim.<key>); repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Directory for eval.json and drift.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EquivArgs {
    /// ekf_aug, ekf_update, ekf_prop, msckf_aug, msckf_update, msckf_prop or all.
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Output goes to stdout, the error line to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                out!("{}", e.to_string().trim_end());
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 1 } else { 0 };
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let msg = first.trim_start_matches("error:").trim();
            eprintln!("{}", usage(msg).report_line());
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.report_line());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::EquivCheck(a) => equiv_check(a),
        Command::Version => {
            out!("slamkit {} (data schema v{SCHEMA_VERSION}, metrics {METRICS_SCHEMA})", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn split_set(s: &str) -> Result<(&str, &str), CliError> {
    s.split_once('=').map(|(k, v)| (k.trim(), v.trim())).ok_or_else(|| usage(format!("--set expects key=value, got '{s}'")))
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    if let Some(path) = &a.config {
        let kv = KeyValues::read(path, "config")?;
        pairs.extend(kv.entries.into_iter().map(|(k, v, _)| (k, v)));
    }
    for s in &a.sets {
        let (k, v) = split_set(s)?;
        pairs.retain(|p| p.0 != k);
        pairs.push((k.into(), v.into()));
    }
    if let Some(m) = &a.model {
        pairs.retain(|p| p.0 != "model");
        pairs.push(("model".into(), m.clone()));
    }
    if let Some(seed) = a.seed {
        pairs.retain(|p| p.0 != "seed");
        pairs.push(("seed".into(), seed.to_string()));
    }
    let config = simconfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).map_err(usage)?;
    let dataset = gen_dataset(&config).map_err(|e| usage(e.to_string()))?;
    save_dataset(&dataset, &a.out)?;
    out!("simulated {} seed={} frames={} tracks={} imu_samples={} -> {}",
        config.model().name(),
        config.seed(),
        dataset.truth.len(),
        dataset.tracks.len(),
        dataset.imu.len(),
        a.out.display()
    );
    Ok(())
}

fn experiment_config(a: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::new(EstimatorKind::Msckf, PathBuf::new());
    let mut output_set = false;
    if let Some(path) = &a.config {
        let kv = KeyValues::read(path, "config")?;
        output_set = kv.get("output").is_some();
        cfg.apply_file(&kv, path)?;
        if kv.get("estimator").is_none() && a.estimator.is_none() {
            return Err(usage("no estimator given (--estimator or estimator=)"));
        }
    } else if a.estimator.is_none() {
        return Err(usage("--estimator is required"));
    }
    let sets = a.sets.iter().map(|s| split_set(s)).collect::<Result<Vec<_>, _>>()?;
    for (k, v) in sets.iter().filter(|s| s.0 == "sim.model").chain(sets.iter().filter(|s| s.0 != "sim.model")) {
        cfg.apply(k, v).map_err(usage)?;
        output_set |= *k == "output";
    }
    if let Some(e) = &a.estimator {
        cfg.apply("estimator", e).map_err(usage)?;
    }
    macro_rules! flag {
        ($field:ident) => {
            if a.$field.is_some() {
                cfg.$field = a.$field;
            }
        };
    }
    flag!(n);
    flag!(k);
    flag!(max_poses);
    flag!(gn_iters);
    flag!(measurement_sigma);
    flag!(process_scale);
    if let Some(d) = &a.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    match &a.out {
        Some(o) => cfg.output = o.clone(),
        None if output_set => {}
        None => return Err(usage("--out is required")),
    }
    Ok(cfg)
}

fn describe(m: &Metrics) -> String {
    let rmse = m.rmse.as_ref().map_or("rmse=n/a".to_string(), |r| format!("rmse_t={:.6}m rmse_r={:.4}deg", r.translation_m, r.rotation_deg));
    format!(
        "trial {} {} frames={}/{} {} gn={} marg={} runtime={:.3}s{}",
        m.trial,
        m.estimator.kind,
        m.frames_estimated,
        m.dataset.frames,
        rmse,
        m.stats.gn_iterations,
        m.stats.marginalizations,
        m.runtime_sec,
        if m.diverged { " DIVERGED" } else { "" }
    )
}

fn run(a: RunArgs) -> Result<(), CliError> {
    let cfg = experiment_config(&a)?;
    let result = run_experiment(&cfg)?;
    for m in &result.metrics {
        out!("{}", describe(m));
    }
    if let Some(s) = &result.summary {
        if let Some(r) = &s.mean_rmse {
            out!("mean over {} trials: rmse_t={:.6}m rmse_r={:.4}deg", s.trials - s.diverged, r.translation_m, r.rotation_deg);
        }
    }
    let diverged = result.diverged();
    if let Some(first) = diverged.first() {
        let d = first.divergence.as_ref().expect("diverged metrics carry a reason");
        let frame = d.frame.map_or("?".to_string(), |f| f.to_string());
        return Err(CliError::Divergence(format!(
            "{} of {} trials diverged; trial {} at frame {frame}: {}; partial results in {}",
            diverged.len(),
            result.metrics.len(),
            first.trial,
            d.reason,
            cfg.output.display()
        )));
    }
    Ok(())
}

#[derive(Debug, serde::Serialize)]
struct EvalReport {
    schema: String,
    matched: usize,
    aligned: bool,
    rmse: RmseInfo,
    /// `[distance_m, drift_m]` pairs.
    drift: Vec<[f64; 2]>,
}

fn trajectory(path: &Path, kinds: &[&str]) -> Result<(slamkit::sim::SimModel, Trajectory), CliError> {
    // Accept either header kind; report the first kind's error otherwise.
    let mut first_err = None;
    for kind in kinds {
        match read_trajectory(path, kind) {
            Ok((model, poses)) => {
                let t = Trajectory::from_points(&poses).map_err(|e| DataError::new(path, e.to_string()))?;
                return Ok((model, t));
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.expect("at least one kind"))
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let (me, est) = trajectory(&a.estimate, &["estimate", "ground_truth"])?;
    let (mg, gt) = trajectory(&a.ground_truth, &["ground_truth", "estimate"])?;
    if me != mg {
        return Err(DataError::new(&a.estimate, format!("{} estimate against {} ground truth", me.name(), mg.name())).into());
    }
    let ev = evaluate(&est, &gt).map_err(|e| DataError::new(&a.estimate, e.to_string()))?;
    let report = EvalReport {
        schema: EVAL_SCHEMA.into(),
        matched: ev.matched,
        aligned: ev.aligned,
        rmse: RmseInfo { translation_m: ev.rmse.translation, rotation_deg: ev.rmse.rotation },
        drift: ev.drift.iter().map(|(d, x)| [*d, *x]).collect(),
    };
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| crate::error::io_error(dir, e))?;
        write_json(&dir.join("eval.json"), &report)?;
        let rows: Vec<Vec<String>> = ev.drift.iter().map(|(d, x)| vec![num(*d), num(*x)]).collect();
        write_table(&dir.join("drift.csv"), "drift", &["distance_m", "drift_m"], &rows)?;
    }
    out!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

pub fn format_report(r: &EquivalenceReport) -> String {
    let mut s = format!(
        "{} trials={} max_mean={:.3e} (tol {:.0e}) max_cov={:.3e} (tol {:.0e}) {}",
        r.kind.name(),
        r.trials,
        r.max_mean,
        r.mean_tolerance,
        r.max_cov,
        r.cov_tolerance,
        if r.passed() { "PASS" } else { "FAIL" }
    );
    if let Some(study) = &r.epsilon_study {
        let parts: Vec<String> = study.iter().map(|(e, d)| format!("{e:.0e}:{d:.3e}")).collect();
        s.push_str(&format!(" epsilon_study=[{}]", parts.join(", ")));
    }
    s
}

fn equiv_check(a: EquivArgs) -> Result<(), CliError> {
    if a.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let kinds: Vec<EquivalenceKind> = if a.kind == "all" {
        EquivalenceKind::ALL.to_vec()
    } else {
        vec![EquivalenceKind::parse(&a.kind).ok_or_else(|| usage(format!("unknown equivalence kind '{}'", a.kind)))?]
    };
    let mut failed = Vec::new();
    for kind in kinds {
        let report = equivalence::check(kind, a.trials, a.seed).map_err(|e| CliError::Equivalence(format!("{}: {e}", kind.name())))?;
        out!("{}", format_report(&report));
        if !report.passed() {
            failed.push(kind.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Equivalence(format!("discrepancy above tolerance for {}", failed.join(", "))))
    }
}
