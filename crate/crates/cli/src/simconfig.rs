//! Simulator configuration as flat `key=value` pairs. `model` selects the
//! world (`planar2d` or `stereo3d`); every other key overrides one field of
//! that model's defaults. Vector fields take comma-separated values.

use std::str::FromStr;

use nalgebra::Vector3;
use slamkit::sim::{PlanarConfig, SimConfig, SimModel, StereoConfig};

use crate::formats::num;

fn scalar<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("invalid value '{v}' for {key}"))
}

fn array<const N: usize>(key: &str, v: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("{key} takes {N} comma-separated values, got {}", parts.len()));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = scalar(key, p)?;
    }
    Ok(out)
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(",")
}

pub fn defaults(model: SimModel) -> SimConfig {
    match model {
        SimModel::Planar2d => SimConfig::Planar(PlanarConfig::default()),
        SimModel::Stereo3d => SimConfig::Stereo(StereoConfig::default()),
    }
}

pub fn parse_model(v: &str) -> Result<SimModel, String> {
    SimModel::parse(v).ok_or_else(|| format!("unknown model '{v}' (expected planar2d or stereo3d)"))
}

/// Sets one field. `model` is not a field and is rejected here.
pub fn set(config: &mut SimConfig, key: &str, v: &str) -> Result<(), String> {
    match config {
        SimConfig::Planar(c) => set_planar(c, key, v),
        SimConfig::Stereo(c) => set_stereo(c, key, v),
    }
}

fn set_planar(c: &mut PlanarConfig, key: &str, v: &str) -> Result<(), String> {
    match key {
        "seed" => c.seed = scalar(key, v)?,
        "steps" => c.steps = scalar(key, v)?,
        "dt" => c.dt = scalar(key, v)?,
        "speed" => c.speed = scalar(key, v)?,
        "turn_rate" => c.turn_rate = scalar(key, v)?,
        "landmarks" => c.landmarks = scalar(key, v)?,
        "landmark_spread" => c.landmark_spread = scalar(key, v)?,
        "max_range" => c.max_range = scalar(key, v)?,
        "process_sigma" => c.process_sigma = array(key, v)?,
        "measurement_sigma" => c.measurement_sigma = scalar(key, v)?,
        "prior_sigma" => c.prior_sigma = array(key, v)?,
        _ => return Err(format!("unknown planar2d key '{key}'")),
    }
    Ok(())
}

fn set_stereo(c: &mut StereoConfig, key: &str, v: &str) -> Result<(), String> {
    match key {
        "seed" => c.seed = scalar(key, v)?,
        "duration" => c.duration = scalar(key, v)?,
        "camera_rate" => c.camera_rate = scalar(key, v)?,
        "imu_rate" => c.imu_rate = scalar(key, v)?,
        "radius" => c.radius = scalar(key, v)?,
        "speed" => c.speed = scalar(key, v)?,
        "vertical_amplitude" => c.vertical_amplitude = scalar(key, v)?,
        "vertical_frequency" => c.vertical_frequency = scalar(key, v)?,
        "wobble" => c.wobble = scalar(key, v)?,
        "landmarks" => c.landmarks = scalar(key, v)?,
        "wall_offset" => c.wall_offset = scalar(key, v)?,
        "wall_height" => c.wall_height = scalar(key, v)?,
        "fx" => c.fx = scalar(key, v)?,
        "fy" => c.fy = scalar(key, v)?,
        "cx" => c.cx = scalar(key, v)?,
        "cy" => c.cy = scalar(key, v)?,
        "width" => c.width = scalar(key, v)?,
        "height" => c.height = scalar(key, v)?,
        "baseline" => c.baseline = scalar(key, v)?,
        "sigma_px" => c.sigma_px = scalar(key, v)?,
        "min_depth" => c.min_depth = scalar(key, v)?,
        "max_depth" => c.max_depth = scalar(key, v)?,
        "gyro_noise" => c.imu_noise.gyro = scalar(key, v)?,
        "accel_noise" => c.imu_noise.accel = scalar(key, v)?,
        "gyro_bias_noise" => c.imu_noise.gyro_bias = scalar(key, v)?,
        "accel_bias_noise" => c.imu_noise.accel_bias = scalar(key, v)?,
        "gyro_bias" => c.gyro_bias = Vector3::from(array::<3>(key, v)?),
        "accel_bias" => c.accel_bias = Vector3::from(array::<3>(key, v)?),
        "prior_sigma" => c.prior_sigma = array(key, v)?,
        _ => return Err(format!("unknown stereo3d key '{key}'")),
    }
    Ok(())
}

/// Every field of `config`, `model` first.
pub fn to_pairs(config: &SimConfig) -> Vec<(String, String)> {
    let mut out = vec![("model".to_string(), config.model().name().to_string())];
    let mut put = |k: &str, v: String| out.push((k.to_string(), v));
    match config {
        SimConfig::Planar(c) => {
            put("seed", c.seed.to_string());
            put("steps", c.steps.to_string());
            put("dt", num(c.dt));
            put("speed", num(c.speed));
            put("turn_rate", num(c.turn_rate));
            put("landmarks", c.landmarks.to_string());
            put("landmark_spread", num(c.landmark_spread));
            put("max_range", num(c.max_range));
            put("process_sigma", list(&c.process_sigma));
            put("measurement_sigma", num(c.measurement_sigma));
            put("prior_sigma", list(&c.prior_sigma));
        }
        SimConfig::Stereo(c) => {
            put("seed", c.seed.to_string());
            for (k, v) in [
                ("duration", c.duration),
                ("camera_rate", c.camera_rate),
                ("imu_rate", c.imu_rate),
                ("radius", c.radius),
                ("speed", c.speed),
                ("vertical_amplitude", c.vertical_amplitude),
                ("vertical_frequency", c.vertical_frequency),
                ("wobble", c.wobble),
            ] {
                put(k, num(v));
            }
            put("landmarks", c.landmarks.to_string());
            for (k, v) in [
                ("wall_offset", c.wall_offset),
                ("wall_height", c.wall_height),
                ("fx", c.fx),
                ("fy", c.fy),
                ("cx", c.cx),
                ("cy", c.cy),
                ("width", c.width),
                ("height", c.height),
                ("baseline", c.baseline),
                ("sigma_px", c.sigma_px),
                ("min_depth", c.min_depth),
                ("max_depth", c.max_depth),
                ("gyro_noise", c.imu_noise.gyro),
                ("accel_noise", c.imu_noise.accel),
                ("gyro_bias_noise", c.imu_noise.gyro_bias),
                ("accel_bias_noise", c.imu_noise.accel_bias),
            ] {
                put(k, num(v));
            }
            put("gyro_bias", list(c.gyro_bias.as_slice()));
            put("accel_bias", list(c.accel_bias.as_slice()));
            put("prior_sigma", list(&c.prior_sigma));
        }
    }
    out
}

/// Builds a config from `(key, value)` pairs on top of the model defaults.
pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)> + Clone) -> Result<SimConfig, String> {
    let model = pairs.clone().into_iter().find(|p| p.0 == "model").map_or(Ok(SimModel::Planar2d), |p| parse_model(p.1))?;
    let mut config = defaults(model);
    for (k, v) in pairs {
        if k != "model" {
            set(&mut config, k, v)?;
        }
    }
    Ok(config)
}
