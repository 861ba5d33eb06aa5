//! Dataset directories: `config.txt`, `ground_truth.csv`, `tracks.csv`,
//! `landmarks.csv` and, for the stereo model, `imu.csv`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use nalgebra::{DVector, Vector3};
use slamkit::imu::ImuSample;
use slamkit::manifold::{ManifoldPoint, UnitQuaternion};
use slamkit::sim::{Dataset, SimModel, Track};

use crate::error::{io_error, CliError, DataError};
use crate::formats::{num, read_table, write_key_values, write_table, KeyValues, Row, Table};
use crate::simconfig;

pub const CONFIG_FILE: &str = "config.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const IMU_FILE: &str = "imu.csv";
pub const TRACKS_FILE: &str = "tracks.csv";
pub const LANDMARKS_FILE: &str = "landmarks.csv";

const PLANAR_POSE: [&str; 4] = ["t_sec", "px", "py", "theta"];
const SPATIAL_POSE: [&str; 8] = ["t_sec", "px", "py", "pz", "qw", "qx", "qy", "qz"];
const IMU_COLUMNS: [&str; 7] = ["t_sec", "wx", "wy", "wz", "ax", "ay", "az"];
const PLANAR_TRACK: [&str; 5] = ["t_sec", "frame_idx", "feature_id", "z1", "z2"];
const STEREO_TRACK: [&str; 6] = ["t_sec", "frame_idx", "feature_id", "z1", "z2", "z3"];
const PLANAR_LANDMARK: [&str; 3] = ["feature_id", "x", "y"];
const SPATIAL_LANDMARK: [&str; 4] = ["feature_id", "x", "y", "z"];

/// Largest deviation from unit norm accepted for a stored quaternion.
const UNIT_TOLERANCE: f64 = 1e-6;

pub fn pose_columns(model: SimModel) -> &'static [&'static str] {
    match model {
        SimModel::Planar2d => &PLANAR_POSE,
        SimModel::Stereo3d => &SPATIAL_POSE,
    }
}

fn pose_fields(path: &Path, t: f64, p: &ManifoldPoint) -> Result<Vec<String>, CliError> {
    let mut out = vec![num(t)];
    match p {
        ManifoldPoint::Euclidean(v) if v.len() == 3 => out.extend(v.iter().map(|x| num(*x))),
        // Spatial poses are (q, r); IMU states (q, v, b_g, b_a, r).
        ManifoldPoint::Product(parts) => {
            let position = match parts.len() {
                2 => &parts[1],
                5 => &parts[4],
                _ => return Err(DataError::new(path, "pose is not (quaternion, position)").into()),
            };
            match (&parts[0], position) {
                (ManifoldPoint::Quaternion(q), ManifoldPoint::Euclidean(r)) if r.len() == 3 => {
                    out.extend(r.iter().map(|x| num(*x)));
                    out.extend(q.coords().iter().map(|x| num(*x)));
                }
                _ => return Err(DataError::new(path, "pose is not (quaternion, position)").into()),
            }
        }
        _ => return Err(DataError::new(path, "pose is neither planar nor spatial").into()),
    }
    Ok(out)
}

fn parse_pose(path: &Path, row: &Row, columns: &[String], model: SimModel) -> Result<(f64, ManifoldPoint), DataError> {
    let v = row.floats(path, 0, columns)?;
    let pose = match model {
        SimModel::Planar2d => ManifoldPoint::euclidean(&v[1..4]),
        SimModel::Stereo3d => {
            let q = UnitQuaternion::from_unit_coords(v[4], v[5], v[6], v[7], UNIT_TOLERANCE)
                .ok_or_else(|| DataError::at(path, row.line, "quaternion is not unit norm"))?;
            ManifoldPoint::Product(vec![ManifoldPoint::Quaternion(q), ManifoldPoint::euclidean(&v[1..4])])
        }
    };
    Ok((v[0], pose))
}

/// Writes timestamped poses under the ground-truth schema with header `kind`.
pub fn write_trajectory(path: &Path, kind: &str, model: SimModel, poses: &[(f64, ManifoldPoint)]) -> Result<(), CliError> {
    let rows = poses.iter().map(|(t, p)| pose_fields(path, *t, p)).collect::<Result<Vec<_>, _>>()?;
    write_table(path, kind, pose_columns(model), &rows)
}

fn check_increasing(path: &Path, rows: &[Row], times: impl Iterator<Item = f64>, strict: bool) -> Result<(), DataError> {
    let mut prev = f64::NEG_INFINITY;
    for (row, t) in rows.iter().zip(times) {
        if t < prev || (strict && t == prev) {
            let what = if strict { "not strictly increasing" } else { "decreasing" };
            return Err(DataError::at(path, row.line, format!("timestamp {t} is {what} (previous {prev})")));
        }
        prev = t;
    }
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory`]; the model follows from
/// the columns. Timestamps must be strictly increasing.
pub fn read_trajectory(path: &Path, kind: &str) -> Result<(SimModel, Vec<(f64, ManifoldPoint)>), CliError> {
    let table = read_table(path, kind, false)?;
    table.expect_columns(path, &[&PLANAR_POSE, &SPATIAL_POSE])?;
    let model = if table.columns.len() == PLANAR_POSE.len() { SimModel::Planar2d } else { SimModel::Stereo3d };
    let poses = table.rows.iter().map(|r| parse_pose(path, r, &table.columns, model)).collect::<Result<Vec<_>, _>>()?;
    check_increasing(path, &table.rows, poses.iter().map(|p| p.0), true)?;
    Ok((model, poses))
}

pub fn save_dataset(d: &Dataset, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let model = d.config.model();
    write_key_values(&dir.join(CONFIG_FILE), "config", &simconfig::to_pairs(&d.config))?;
    write_trajectory(&dir.join(GROUND_TRUTH_FILE), "ground_truth", model, &d.truth)?;
    let (track_cols, lm_cols): (&[&str], &[&str]) = match model {
        SimModel::Planar2d => (&PLANAR_TRACK, &PLANAR_LANDMARK),
        SimModel::Stereo3d => (&STEREO_TRACK, &SPATIAL_LANDMARK),
    };
    let tracks: Vec<Vec<String>> = d
        .tracks
        .iter()
        .map(|t| [num(t.t), t.frame.to_string(), t.feature.to_string()].into_iter().chain(t.z.iter().map(|x| num(*x))).collect())
        .collect();
    write_table(&dir.join(TRACKS_FILE), "tracks", track_cols, &tracks)?;
    let landmarks: Vec<Vec<String>> =
        d.landmarks.iter().map(|(id, p)| std::iter::once(id.to_string()).chain(p.iter().map(|x| num(*x))).collect()).collect();
    write_table(&dir.join(LANDMARKS_FILE), "landmarks", lm_cols, &landmarks)?;
    if model == SimModel::Stereo3d {
        let imu: Vec<Vec<String>> = d
            .imu
            .iter()
            .map(|s| std::iter::once(num(s.t)).chain(s.gyro.iter().chain(s.accel.iter()).map(|x| num(*x))).collect())
            .collect();
        write_table(&dir.join(IMU_FILE), "imu", &IMU_COLUMNS, &imu)?;
    }
    Ok(())
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(DataError::new(path, "missing file").into())
    }
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    if !dir.is_dir() {
        return Err(DataError::new(dir, "dataset directory does not exist").into());
    }
    let config_path = dir.join(CONFIG_FILE);
    require(&config_path)?;
    let kv = KeyValues::read(&config_path, "config")?;
    let config = simconfig::from_pairs(kv.entries.iter().map(|e| (e.0.as_str(), e.1.as_str())))
        .map_err(|m| DataError::new(&config_path, m))?;
    config.validate().map_err(|e| DataError::new(&config_path, e.to_string()))?;
    let model = config.model();

    let gt_path = dir.join(GROUND_TRUTH_FILE);
    require(&gt_path)?;
    let (gt_model, truth) = read_trajectory(&gt_path, "ground_truth")?;
    if gt_model != model {
        return Err(DataError::at(&gt_path, 1, format!("columns do not match model {}", model.name())).into());
    }
    if truth.is_empty() {
        return Err(DataError::new(&gt_path, "no poses").into());
    }

    let imu = match model {
        SimModel::Planar2d => Vec::new(),
        SimModel::Stereo3d => {
            let path = dir.join(IMU_FILE);
            require(&path)?;
            load_imu(&path)?
        }
    };

    let tracks_path = dir.join(TRACKS_FILE);
    require(&tracks_path)?;
    let tracks = load_tracks(&tracks_path, model, &truth)?;

    let lm_path = dir.join(LANDMARKS_FILE);
    let landmarks = if lm_path.is_file() { load_landmarks(&lm_path, model)? } else { Vec::new() };

    Ok(Dataset { config, landmarks, truth, imu, tracks })
}

fn load_imu(path: &Path) -> Result<Vec<ImuSample>, CliError> {
    let table = read_table(path, "imu", false)?;
    table.expect_columns(path, &[&IMU_COLUMNS])?;
    let samples = table
        .rows
        .iter()
        .map(|r| {
            let v = r.floats(path, 0, &table.columns)?;
            Ok(ImuSample { t: v[0], gyro: Vector3::new(v[1], v[2], v[3]), accel: Vector3::new(v[4], v[5], v[6]) })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    check_increasing(path, &table.rows, samples.iter().map(|s| s.t), true)?;
    Ok(samples)
}

/// Tracks are ordered by frame; every track's time must match its frame.
fn load_tracks(path: &Path, model: SimModel, truth: &[(f64, ManifoldPoint)]) -> Result<Vec<Track>, CliError> {
    let table: Table = read_table(path, "tracks", true)?;
    if table.columns.is_empty() && table.rows.is_empty() {
        return Ok(Vec::new());
    }
    let cols: &[&str] = match model {
        SimModel::Planar2d => &PLANAR_TRACK,
        SimModel::Stereo3d => &STEREO_TRACK,
    };
    table.expect_columns(path, &[cols])?;
    let mut tracks = Vec::with_capacity(table.rows.len());
    let mut seen = HashSet::new();
    let mut last_frame = 0;
    for row in &table.rows {
        let t = row.f64(path, 0, "t_sec")?;
        let frame: usize = row.parse(path, 1, "frame_idx")?;
        let feature: u64 = row.parse(path, 2, "feature_id")?;
        let z = DVector::from_vec(row.floats(path, 3, &table.columns)?);
        let at = |m: String| DataError::at(path, row.line, m);
        if let Some(prev) = tracks.last().map(|p: &Track| p.t) {
            if t < prev {
                return Err(at(format!("timestamp {t} is decreasing (previous {prev})")).into());
            }
        }
        if frame < last_frame {
            return Err(at(format!("frame_idx {frame} is decreasing (previous {last_frame})")).into());
        }
        last_frame = frame;
        let frame_t = truth.get(frame).map(|p| p.0).ok_or_else(|| at(format!("frame_idx {frame} has no ground-truth pose")))?;
        if (frame_t - t).abs() > 1e-9 {
            return Err(at(format!("timestamp {t} does not match frame {frame} at {frame_t}")).into());
        }
        if !seen.insert((frame, feature)) {
            return Err(at(format!("feature {feature} appears twice in frame {frame}")).into());
        }
        tracks.push(Track { t, frame, feature, z });
    }
    Ok(tracks)
}

fn load_landmarks(path: &Path, model: SimModel) -> Result<Vec<(u64, DVector<f64>)>, CliError> {
    let table = read_table(path, "landmarks", true)?;
    if table.columns.is_empty() && table.rows.is_empty() {
        return Ok(Vec::new());
    }
    let cols: &[&str] = match model {
        SimModel::Planar2d => &PLANAR_LANDMARK,
        SimModel::Stereo3d => &SPATIAL_LANDMARK,
    };
    table.expect_columns(path, &[cols])?;
    let mut seen = HashSet::new();
    table
        .rows
        .iter()
        .map(|r| {
            let id: u64 = r.parse(path, 0, "feature_id")?;
            if !seen.insert(id) {
                return Err(DataError::at(path, r.line, format!("duplicate feature_id {id}")).into());
            }
            Ok((id, DVector::from_vec(r.floats(path, 1, &table.columns)?)))
        })
        .collect()
}
