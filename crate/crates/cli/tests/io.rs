use std::fs;
use std::path::Path;

use slamkit::estimators::EstimatorKind;
use slamkit::sim::{gen_dataset, PlanarConfig, SimConfig, StereoConfig};
use slamkit_cli::dataset::{TRACKS_FILE, GROUND_TRUTH_FILE, IMU_FILE, CONFIG_FILE};
use slamkit_cli::{load_dataset, run_experiment, save_dataset, CliError, ExperimentConfig};

fn planar(steps: usize) -> SimConfig {
    SimConfig::Planar(PlanarConfig { steps, ..PlanarConfig::default() })
}

fn saved(config: &SimConfig, dir: &Path) {
    save_dataset(&gen_dataset(config).unwrap(), dir).unwrap();
}

/// Replaces line `line` (1-based) of `path`.
fn edit_line(path: &Path, line: usize, f: impl Fn(&str) -> String) {
    let text = fs::read_to_string(path).unwrap();
    let out: Vec<String> = text.lines().enumerate().map(|(i, l)| if i + 1 == line { f(l) } else { l.to_string() }).collect();
    fs::write(path, out.join("\n") + "\n").unwrap();
}

fn data_error(e: CliError) -> slamkit_cli::DataError {
    match e {
        CliError::Data(d) => d,
        other => panic!("expected a data error, got {other:?}"),
    }
}

#[test]
fn generated_datasets_round_trip_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let quiet = PlanarConfig { measurement_sigma: 0.0, process_sigma: [0.0; 3], ..PlanarConfig::default() };
    for (i, c) in [planar(200), SimConfig::Planar(quiet), SimConfig::Stereo(StereoConfig { duration: 1.0, ..StereoConfig::default() })]
        .into_iter()
        .enumerate()
    {
        let d = gen_dataset(&c).unwrap();
        let dir = tmp.path().join(i.to_string());
        save_dataset(&d, &dir).unwrap();
        assert_eq!(load_dataset(&dir).unwrap(), d);
    }
}

#[test]
fn decreasing_timestamps_name_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    saved(&planar(30), tmp.path());

    let tracks = tmp.path().join(TRACKS_FILE);
    let original = fs::read_to_string(&tracks).unwrap();
    // Line 40 sits well inside frame 1 or later; give it time zero.
    edit_line(&tracks, 40, |l| {
        let mut f: Vec<&str> = l.split(',').collect();
        f[0] = "0";
        f.join(",")
    });
    let e = data_error(load_dataset(tmp.path()).unwrap_err());
    assert_eq!(e.line, Some(40));
    assert!(e.message.contains("decreasing"), "{e}");
    assert!(e.to_string().contains("tracks.csv:40"), "{e}");
    fs::write(&tracks, original).unwrap();

    let gt = tmp.path().join(GROUND_TRUTH_FILE);
    edit_line(&gt, 6, |l| l.replacen("0.4", "0.1", 1));
    let e = data_error(load_dataset(tmp.path()).unwrap_err());
    assert_eq!(e.line, Some(6));
    assert!(e.message.contains("increasing"), "{e}");
}

#[test]
fn malformed_rows_report_their_line() {
    let tmp = tempfile::tempdir().unwrap();
    saved(&planar(20), tmp.path());
    let tracks = tmp.path().join(TRACKS_FILE);
    edit_line(&tracks, 7, |l| l.replace(',', ",x"));
    assert_eq!(data_error(load_dataset(tmp.path()).unwrap_err()).line, Some(7));
    edit_line(&tracks, 7, |_| "0,0,1".into());
    let e = data_error(load_dataset(tmp.path()).unwrap_err());
    assert_eq!(e.line, Some(7));
    assert!(e.message.contains("fields"), "{e}");
}

#[test]
fn missing_files_and_schema_mismatches_are_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    saved(&planar(20), tmp.path());

    let gt = tmp.path().join(GROUND_TRUTH_FILE);
    edit_line(&gt, 1, |l| l.replace("v1", "v2"));
    let e = data_error(load_dataset(tmp.path()).unwrap_err());
    assert_eq!(e.line, Some(1));
    assert!(e.message.contains("v2"), "{e}");
    edit_line(&gt, 1, |l| l.replace("theta", "yaw").replace("v2", "v1"));
    assert!(data_error(load_dataset(tmp.path()).unwrap_err()).message.contains("columns"));

    fs::remove_file(&gt).unwrap();
    let e = data_error(load_dataset(tmp.path()).unwrap_err());
    assert!(e.file.ends_with(GROUND_TRUTH_FILE) && e.message.contains("missing"), "{e}");

    let tmp = tempfile::tempdir().unwrap();
    saved(&SimConfig::Stereo(StereoConfig { duration: 0.5, ..StereoConfig::default() }), tmp.path());
    fs::remove_file(tmp.path().join(IMU_FILE)).unwrap();
    assert!(data_error(load_dataset(tmp.path()).unwrap_err()).file.ends_with(IMU_FILE));

    let cfg = tmp.path().join(CONFIG_FILE);
    fs::write(&cfg, "model=stereo3d\nbogus=1\n").unwrap();
    assert_eq!(data_error(load_dataset(tmp.path()).unwrap_err()).file, cfg);
}

#[test]
fn empty_tracks_file_is_a_valid_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    saved(&planar(40), tmp.path());
    let tracks = tmp.path().join(TRACKS_FILE);
    for contents in ["# slamkit tracks v1: t_sec,frame_idx,feature_id,z1,z2\n", ""] {
        fs::write(&tracks, contents).unwrap();
        let d = load_dataset(tmp.path()).unwrap();
        assert!(d.tracks.is_empty());
        let cfg = ExperimentConfig {
            dataset: Some(tmp.path().to_path_buf()),
            ..ExperimentConfig::new(EstimatorKind::Ekf, tmp.path().join("out"))
        };
        let r = run_experiment(&cfg).unwrap();
        assert!(!r.metrics[0].diverged);
        assert_eq!(r.metrics[0].frames_estimated, 41);
    }
}

#[test]
fn noise_free_planar_ekf_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(EstimatorKind::Ekf, tmp.path());
    cfg.sim = SimConfig::Planar(PlanarConfig { measurement_sigma: 0.0, process_sigma: [0.0; 3], ..PlanarConfig::default() });
    let r = run_experiment(&cfg).unwrap();
    let rmse = r.metrics[0].rmse.as_ref().unwrap();
    assert!(rmse.translation_m < 1e-6, "{}", rmse.translation_m);
}

#[test]
fn repeated_runs_agree_except_for_runtime() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let mut cfg = ExperimentConfig::new(EstimatorKind::Msckf, tmp.path().join(name));
        cfg.sim = planar(60);
        let mut m = run_experiment(&cfg).unwrap().metrics.remove(0);
        m.runtime_sec = 0.0;
        m
    };
    assert_eq!(run("a"), run("b"));
    for f in ["estimate.csv", "drift.csv", "run.log"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn parallel_trials_merge_in_trial_order() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(EstimatorKind::SlidingWindow, tmp.path().join("all"));
    cfg.sim = planar(40);
    cfg.n = Some(3);
    cfg.trials = 4;
    let all = run_experiment(&cfg).unwrap();
    assert_eq!(all.metrics.iter().map(|m| m.trial).collect::<Vec<_>>(), [0, 1, 2, 3]);
    let summary = all.summary.unwrap();
    assert_eq!(summary.runs.len(), 4);
    assert!(tmp.path().join("all/summary.json").is_file());
    for (i, m) in all.metrics.iter().enumerate() {
        assert_eq!(m.dataset.seed, 42 + i as u64);
        let single = ExperimentConfig { seed: 42 + i as u64, trials: 1, output: tmp.path().join(format!("one{i}")), ..cfg.clone() };
        let one = run_experiment(&single).unwrap().metrics.remove(0);
        assert_eq!(one.rmse, m.rmse);
        assert_eq!(one.stats, m.stats);
        let a = fs::read(tmp.path().join(format!("all/trial_{i:03}/estimate.csv"))).unwrap();
        assert_eq!(a, fs::read(tmp.path().join(format!("one{i}/estimate.csv"))).unwrap());
    }
}

#[test]
fn invalid_experiments_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let base = ExperimentConfig::new(EstimatorKind::Msckf, tmp.path());
    for cfg in [
        ExperimentConfig { trials: 0, ..base.clone() },
        ExperimentConfig { estimator: EstimatorKind::Ekf, n: Some(3), ..base.clone() },
        ExperimentConfig { k: Some(2), ..base.clone() },
        ExperimentConfig { max_poses: Some(2), ..base.clone() },
        ExperimentConfig { measurement_sigma: Some(-1.0), ..base.clone() },
        ExperimentConfig { dataset: Some(tmp.path().into()), trials: 2, ..base.clone() },
    ] {
        assert!(matches!(run_experiment(&cfg), Err(CliError::Usage(_))), "{cfg:?}");
    }
}

#[test]
fn msckf_window_flag_sets_the_pose_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { n: Some(7), ..ExperimentConfig::new(EstimatorKind::Msckf, tmp.path()) };
    let s = cfg.schedule().unwrap();
    assert_eq!(s.max_poses, 8);
    let cfg = ExperimentConfig { n: Some(4), ..ExperimentConfig::new(EstimatorKind::Keyframe, tmp.path()) };
    assert_eq!(cfg.schedule().unwrap().window, 4);
}
