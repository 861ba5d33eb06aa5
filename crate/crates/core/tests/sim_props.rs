use std::collections::HashMap;

use nalgebra::{DVector, Vector3};
use slamkit::factors::models::{MeasurementModel, PoseMap, StepDynamics, Unicycle};
use slamkit::imu::{ImuNoise, ImuState};
use slamkit::manifold::ManifoldPoint;
use slamkit::sim::{camera_extrinsics, gen_dataset, Dataset, PlanarConfig, SimConfig, StereoConfig};

fn short_stereo(seed: u64) -> StereoConfig {
    StereoConfig { seed, duration: 2.0, ..StereoConfig::default() }
}

fn quiet_stereo() -> StereoConfig {
    StereoConfig {
        sigma_px: 0.0,
        imu_noise: ImuNoise { gyro: 0.0, accel: 0.0, gyro_bias: 0.0, accel_bias: 0.0 },
        ..short_stereo(5)
    }
}

fn quiet_planar(seed: u64, steps: usize) -> PlanarConfig {
    PlanarConfig { seed, steps, process_sigma: [0.0; 3], measurement_sigma: 0.0, ..PlanarConfig::default() }
}

fn imu_point(pose: &ManifoldPoint) -> ManifoldPoint {
    let q = *pose.component(0).unwrap().as_quaternion().unwrap();
    let r = pose.component(1).unwrap().as_euclidean().unwrap();
    ImuState { q, v: Vector3::zeros(), bg: Vector3::zeros(), ba: Vector3::zeros(), r: Vector3::new(r[0], r[1], r[2]) }.to_point()
}

fn landmark_map(d: &Dataset) -> HashMap<u64, DVector<f64>> {
    d.landmarks.iter().cloned().collect()
}

#[test]
fn same_seed_same_dataset() {
    for cfg in [SimConfig::Planar(PlanarConfig::default()), SimConfig::Stereo(short_stereo(7))] {
        assert_eq!(gen_dataset(&cfg).unwrap(), gen_dataset(&cfg).unwrap());
    }
    let a = gen_dataset(&SimConfig::Planar(PlanarConfig { seed: 1, ..PlanarConfig::default() })).unwrap();
    let b = gen_dataset(&SimConfig::Planar(PlanarConfig { seed: 2, ..PlanarConfig::default() })).unwrap();
    assert_ne!(a.tracks, b.tracks);
}

#[test]
fn injected_measurement_noise_has_the_declared_statistics() {
    let sigma = 0.05;
    let clean = gen_dataset(&SimConfig::Planar(quiet_planar(11, 3000))).unwrap();
    let noisy = gen_dataset(&SimConfig::Planar(PlanarConfig { measurement_sigma: sigma, ..quiet_planar(11, 3000) })).unwrap();
    assert_eq!(clean.tracks.len(), noisy.tracks.len());
    let draws: Vec<DVector<f64>> = clean.tracks.iter().zip(&noisy.tracks).map(|(a, b)| &b.z - &a.z).collect();
    let n = draws.len() as f64;
    assert!(2.0 * n >= 1e5, "only {} draws", 2.0 * n);
    let mean = draws.iter().fold(DVector::zeros(2), |acc, d| acc + d) / n;
    for i in 0..2 {
        assert!(mean[i].abs() <= 3.0 * sigma / n.sqrt(), "mean {}", mean[i]);
    }
    let cov = draws.iter().fold(nalgebra::DMatrix::zeros(2, 2), |acc, d| acc + d * d.transpose()) / n;
    let want = nalgebra::DMatrix::identity(2, 2) * sigma * sigma;
    assert!((&cov - &want).norm() <= 0.05 * want.norm(), "cov {cov}");
}

#[test]
fn noise_free_planar_truth_satisfies_the_models() {
    let c = quiet_planar(3, 200);
    let d = gen_dataset(&SimConfig::Planar(c.clone())).unwrap();
    let problem = d.problem().unwrap();
    let uni = Unicycle { v: c.speed, omega: c.turn_rate, dt: c.dt, noise: nalgebra::DMatrix::identity(3, 3) };
    for w in d.truth.windows(2) {
        let pred = uni.propagate(&w[0].1).unwrap();
        assert!(w[1].1.boxminus(&pred).unwrap().norm() < 1e-6);
    }
    let lm = landmark_map(&d);
    for tr in &d.tracks {
        let z = problem.sensor.measurement.predict(&d.truth[tr.frame].1, &lm[&tr.feature]).unwrap();
        assert!((z - &tr.z).norm() < 1e-10);
    }
}

#[test]
fn noise_free_stereo_tracks_match_the_projection_of_the_truth() {
    let c = quiet_stereo();
    let d = gen_dataset(&SimConfig::Stereo(c.clone())).unwrap();
    assert!(!d.tracks.is_empty());
    let cam = c.stereo();
    let ext = camera_extrinsics();
    let lm = landmark_map(&d);
    for tr in &d.tracks {
        let pose = ext.pose(&imu_point(&d.truth[tr.frame].1)).unwrap();
        let z = cam.predict(&pose, &lm[&tr.feature]).unwrap();
        assert!((&z - &tr.z).norm() < 1e-10);
        assert!(tr.z[0] >= tr.z[1], "negative disparity");
        let back = cam.inverse(&pose, &tr.z).unwrap().unwrap();
        assert!((back - &lm[&tr.feature]).norm() < 1e-8);
    }
}

#[test]
fn stereo_truth_follows_the_noise_free_imu_stream() {
    let c = quiet_stereo();
    let d = gen_dataset(&SimConfig::Stereo(c.clone())).unwrap();
    let mut s = ImuState { bg: c.gyro_bias, ba: c.accel_bias, ..c.initial_state() };
    let per = c.imu_per_frame();
    for (k, (t, pose)) in d.truth.iter().enumerate().skip(1) {
        let samples = &d.imu[(k - 1) * per..k * per];
        s = slamkit::imu::integrate(&s, samples, *t, &slamkit::imu::GRAVITY, 1);
        let q = pose.component(0).unwrap().as_quaternion().unwrap();
        let r = pose.component(1).unwrap().as_euclidean().unwrap();
        assert!(s.q.boxminus(q).unwrap().norm() < 1e-6, "frame {k}");
        assert!((s.r - Vector3::new(r[0], r[1], r[2])).norm() < 1e-6, "frame {k}");
    }
}

#[test]
fn timestamps_increase_and_pairs_are_unique() {
    for cfg in [SimConfig::Planar(PlanarConfig::default()), SimConfig::Stereo(short_stereo(9))] {
        let d = gen_dataset(&cfg).unwrap();
        assert!(d.truth.windows(2).all(|w| w[1].0 > w[0].0));
        assert!(d.imu.windows(2).all(|w| w[1].t > w[0].t));
        let mut seen = std::collections::HashSet::new();
        assert!(d.tracks.iter().all(|t| seen.insert((t.frame, t.feature))));
        let ids: std::collections::HashSet<_> = d.landmarks.iter().map(|l| l.0).collect();
        assert_eq!(ids.len(), d.landmarks.len());
    }
}
