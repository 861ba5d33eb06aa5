use slamkit::estimators::ekf::{self, ekf_run, EkfBelief};
use slamkit::estimators::window::{window_run, WindowEstimator};
use slamkit::estimators::{run, EstimatorSchedule, FeaturePolicy, Problem, RunOutput};
use slamkit::metrics::{evaluate, Trajectory};
use slamkit::sim::{gen_dataset, Dataset, PlanarConfig, SimConfig, StereoConfig};

fn planar(c: PlanarConfig) -> (Dataset, Problem) {
    let d = gen_dataset(&SimConfig::Planar(c)).unwrap();
    let p = d.problem().unwrap();
    (d, p)
}

fn quiet(steps: usize) -> PlanarConfig {
    PlanarConfig { steps, process_sigma: [0.0; 3], measurement_sigma: 0.0, prior_sigma: [0.0; 3], ..PlanarConfig::default() }
}

fn max_error(out: &RunOutput, d: &Dataset) -> f64 {
    out.estimates.iter().zip(&d.truth).map(|(e, t)| e.1.boxminus(&t.1).unwrap().norm()).fold(0.0, f64::max)
}

fn rmse(out: &RunOutput, d: &Dataset) -> f64 {
    let est = Trajectory::from_points(&out.estimates).unwrap();
    let gt = Trajectory::from_points(&d.truth).unwrap();
    evaluate(&est, &gt).unwrap().rmse.translation
}

fn swf1_keep_all() -> EstimatorSchedule {
    EstimatorSchedule { feature_policy: FeaturePolicy::KeepAll, gn_iters: 1, ..EstimatorSchedule::swf(1) }
}

#[test]
fn ekf_is_a_window_of_one() {
    let (_, p) = planar(PlanarConfig { steps: 120, ..PlanarConfig::default() });
    let a = ekf_run(&p, &EstimatorSchedule::ekf()).unwrap();
    let b = window_run(&p, &swf1_keep_all()).unwrap();
    let gap = a.estimates.iter().zip(&b.estimates).map(|(x, y)| x.1.boxminus(&y.1).unwrap().norm()).fold(0.0, f64::max);
    assert!(gap <= 1e-8, "gap {gap:e}");
}

#[test]
fn noise_free_estimators_track_the_truth() {
    let (d, p) = planar(quiet(100));
    assert!(rmse(&run(&p, &EstimatorSchedule::ekf()).unwrap(), &d) < 1e-6);
    assert!(max_error(&run(&p, &EstimatorSchedule::swf(3)).unwrap(), &d) < 1e-8);
    assert!(max_error(&run(&p, &EstimatorSchedule::keyframe(2, 3)).unwrap(), &d) < 1e-8);
    assert!(max_error(&run(&p, &EstimatorSchedule::msckf(5)).unwrap(), &d) < 1e-6);
}

#[test]
fn sliding_window_never_exceeds_its_size() {
    let (_, p) = planar(PlanarConfig { steps: 40, ..PlanarConfig::default() });
    for n in [1, 3, 6] {
        let mut est = WindowEstimator::new(EstimatorSchedule::swf(n)).unwrap();
        for f in &p.frames {
            est.step(&p, f).unwrap();
            assert!(est.frame_count() <= n);
        }
        assert_eq!(est.frame_count(), n);
    }
}

#[test]
fn keyframe_window_bounds_and_policy_limits() {
    let (_, p) = planar(PlanarConfig { steps: 60, ..PlanarConfig::default() });
    let mut est = WindowEstimator::new(EstimatorSchedule::keyframe(2, 3)).unwrap();
    for f in &p.frames {
        est.step(&p, f).unwrap();
        assert!(est.frame_count() <= 5);
        assert!(est.keyframe_count() <= 3);
    }

    let every = EstimatorSchedule { match_threshold: 1.0, ..EstimatorSchedule::keyframe(2, 3) };
    let mut est = WindowEstimator::new(every).unwrap();
    for f in &p.frames {
        est.step(&p, f).unwrap();
        assert_eq!(est.keyframe_count(), est.frame_count());
    }

    let (_, still) = planar(PlanarConfig { speed: 0.0, turn_rate: 0.0, steps: 20, ..PlanarConfig::default() });
    let mut est = WindowEstimator::new(EstimatorSchedule::keyframe(2, 3)).unwrap();
    for f in &still.frames {
        est.step(&still, f).unwrap();
        assert_eq!(est.keyframe_count(), 1);
    }
}

#[test]
fn msckf_window_stays_below_the_pose_bound() {
    let (_, p) = planar(PlanarConfig { steps: 80, ..PlanarConfig::default() });
    for n in [3, 5, 9] {
        let schedule = EstimatorSchedule::msckf(n);
        let out = run(&p, &schedule).unwrap();
        assert!(out.stats.peak_window <= schedule.max_poses - 1);
        assert_eq!(out.stats.peak_window, n);
    }
}

#[test]
fn ekf_covariance_stays_symmetric_and_psd() {
    let (_, p) = planar(PlanarConfig { steps: 60, ..PlanarConfig::default() });
    let model = p.sensor.measurement.clone();
    let mut b = EkfBelief::new(p.prior_mean.as_euclidean().unwrap().clone(), p.prior_covariance.clone(), 2);
    let check = |b: &EkfBelief| {
        let c = &b.covariance;
        assert!((c - c.transpose()).norm() <= 1e-12 * c.norm());
        assert!(c.clone().symmetric_eigen().eigenvalues.min() >= -1e-12 * c.norm());
    };
    for f in &p.frames {
        if let Some(tr) = &f.transition {
            let dynamics = tr.at(&b.pose_point()).unwrap();
            b = ekf::propagate_classical(&b, dynamics.as_ref()).unwrap();
            check(&b);
        }
        let mut new = Vec::new();
        let mut existing = Vec::new();
        for o in &f.observations {
            match b.slot_of(o.landmark) {
                Some(s) => existing.push((s, o.z.clone())),
                None => new.push((o.landmark, o.z.clone())),
            }
        }
        b = ekf::augment_classical(&b, model.as_ref(), &new).unwrap();
        check(&b);
        b = ekf::update_classical(&b, model.as_ref(), &existing).unwrap();
        check(&b);
    }
}

#[test]
fn stereo_estimators_beat_dead_reckoning() {
    let d = gen_dataset(&SimConfig::Stereo(StereoConfig { duration: 3.0, ..StereoConfig::default() })).unwrap();
    let p = d.problem().unwrap();
    let dr = rmse(&run(&p, &EstimatorSchedule::dead_reckoning()).unwrap(), &d);
    for s in [EstimatorSchedule::msckf(5), EstimatorSchedule::swf(3)] {
        let e = rmse(&run(&p, &s).unwrap(), &d);
        assert!(e < dr, "{:?}: {e} vs dead reckoning {dr}", s.kind);
    }
}
