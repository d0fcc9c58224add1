//! Per-slow-pose feature vector built from the preceding fast-pose/IMU window.
//!
//! The layout is frozen: preprocessing, the autoencoder and model bundles all
//! key on [`schema_hash`]. Residuals are taken between every fast pose of the
//! window and the incoming slow pose; the window itself is integrated before
//! that pose arrives.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{geodesic_angle, SlowPoseState};
use crate::odometry::FastPoseWindow;

pub const FEATURE_DIM: usize = 41;

/// `(name, unit)` for every feature index.
pub const FEATURE_SCHEMA: [(&str, &str); FEATURE_DIM] = [
    ("window_count", "1"),
    ("window_duration", "s"),
    ("pos_residual_mean", "m"),
    ("pos_residual_std", "m"),
    ("pos_residual_min", "m"),
    ("pos_residual_max", "m"),
    ("pos_residual_l1", "m"),
    ("vel_residual_mean", "m/s"),
    ("vel_residual_std", "m/s"),
    ("vel_residual_min", "m/s"),
    ("vel_residual_max", "m/s"),
    ("vel_residual_l1", "m/s"),
    ("ang_residual_mean", "rad"),
    ("ang_residual_std", "rad"),
    ("ang_residual_min", "rad"),
    ("ang_residual_max", "rad"),
    ("ang_residual_sum", "rad"),
    ("bias_acc_norm", "m/s^2"),
    ("bias_gyro_norm", "rad/s"),
    ("bias_acc_delta_norm", "m/s^2"),
    ("bias_gyro_delta_norm", "rad/s"),
    ("imu_acc_norm_mean", "m/s^2"),
    ("imu_acc_norm_std", "m/s^2"),
    ("imu_acc_norm_min", "m/s^2"),
    ("imu_acc_norm_max", "m/s^2"),
    ("imu_gyro_norm_mean", "rad/s"),
    ("imu_gyro_norm_std", "rad/s"),
    ("imu_gyro_norm_min", "rad/s"),
    ("imu_gyro_norm_max", "rad/s"),
    ("imu_acc_x_mean", "m/s^2"),
    ("imu_acc_x_std", "m/s^2"),
    ("imu_acc_y_mean", "m/s^2"),
    ("imu_acc_y_std", "m/s^2"),
    ("imu_acc_z_mean", "m/s^2"),
    ("imu_acc_z_std", "m/s^2"),
    ("imu_gyro_x_mean", "rad/s"),
    ("imu_gyro_x_std", "rad/s"),
    ("imu_gyro_y_mean", "rad/s"),
    ("imu_gyro_y_std", "rad/s"),
    ("imu_gyro_z_mean", "rad/s"),
    ("imu_gyro_z_std", "rad/s"),
];

/// Indices whose value depends on the incoming slow pose.
pub const POSE_DEPENDENT: std::ops::Range<usize> = 2..21;

/// First 8 bytes (little-endian) of SHA-256 over the `name:unit` lines.
pub fn schema_hash() -> u64 {
    let mut h = Sha256::new();
    for (name, unit) in FEATURE_SCHEMA {
        h.update(name.as_bytes());
        h.update(b":");
        h.update(unit.as_bytes());
        h.update(b"\n");
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; FEATURE_DIM] =
            v.try_into().map_err(|_| Error::DimensionMismatch { expected: FEATURE_DIM, got: v.len() })?;
        Ok(Self(arr))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Summary {
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
    sum: f64,
}

/// Population statistics; a single value has std 0.
fn summarize(values: impl Iterator<Item = f64>) -> Summary {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let sum: f64 = v.iter().sum();
    let mean = sum / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in &v {
        min = min.min(x);
        max = max.max(x);
    }
    // mean can land a rounding step outside [min, max] for near-constant data
    let mean = mean.clamp(min, max);
    Summary { mean, std: var.sqrt(), min, max, sum }
}

/// Builds the feature vector for `incoming` from the window that preceded it.
pub fn extract(
    window: &FastPoseWindow,
    incoming: &SlowPoseState,
    prev_accepted: &SlowPoseState,
) -> Result<FeatureVector> {
    if window.is_degenerate() || window.imu.is_empty() {
        return Err(Error::DegenerateWindow { round_id: incoming.round_id });
    }
    let poses = &window.poses;
    let mut f = [0.0; FEATURE_DIM];

    f[0] = poses.len() as f64;
    f[1] = poses.last().expect("non-empty").timestamp - window.anchor.timestamp;

    let pos = summarize(poses.iter().map(|p| (p.position - incoming.position).norm()));
    let vel = summarize(poses.iter().map(|p| (p.velocity - incoming.velocity).norm()));
    let angles =
        poses.iter().map(|p| geodesic_angle(p.orientation, incoming.orientation)).collect::<Result<Vec<_>>>()?;
    let ang = summarize(angles.into_iter());
    for (base, s) in [(2, pos), (7, vel), (12, ang)] {
        f[base..base + 5].copy_from_slice(&[s.mean, s.std, s.min, s.max, s.sum]);
    }

    f[17] = incoming.bias_acc.norm();
    f[18] = incoming.bias_gyro.norm();
    f[19] = (incoming.bias_acc - prev_accepted.bias_acc).norm();
    f[20] = (incoming.bias_gyro - prev_accepted.bias_gyro).norm();

    let imu = &window.imu;
    let acc = summarize(imu.iter().map(|s| s.accel.norm()));
    let gyr = summarize(imu.iter().map(|s| s.gyro.norm()));
    f[21..25].copy_from_slice(&[acc.mean, acc.std, acc.min, acc.max]);
    f[25..29].copy_from_slice(&[gyr.mean, gyr.std, gyr.min, gyr.max]);

    let channels: [fn(&crate::motion::ImuSample) -> f64; 6] =
        [|s| s.accel.x, |s| s.accel.y, |s| s.accel.z, |s| s.gyro.x, |s| s.gyro.y, |s| s.gyro.z];
    for (i, ch) in channels.iter().enumerate() {
        let s = summarize(imu.iter().map(ch));
        f[29 + 2 * i] = s.mean;
        f[30 + 2 * i] = s.std;
    }

    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("feature vector"));
    }
    Ok(FeatureVector(f))
}
