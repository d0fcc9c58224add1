//! Synthetic 6-DoF ground truth and an exactly consistent IMU stream.
//!
//! Position on each world axis is a sum of sinusoids. Orientation is given by
//! Z-Y-X Euler angles whose *rates* are sums of sinusoids, so the angles are
//! their closed-form integrals (starting from identity at `t = 0`). All
//! derivatives are analytic.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{Quaternion, Vec3};
use crate::rng::{stream_rng, Stream};

/// World-frame gravity, m/s².
pub const GRAVITY: Vec3 = Vec3::new(0.0, 0.0, -9.81);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineTerm {
    pub amplitude: f64,
    /// Hz
    pub frequency: f64,
    /// rad
    pub phase: f64,
}

impl SineTerm {
    fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency
    }

    /// Value and first two derivatives of `A sin(2πft + φ)`.
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let w = self.omega();
        let (s, c) = (w * t + self.phase).sin_cos();
        (self.amplitude * s, self.amplitude * w * c, -self.amplitude * w * w * s)
    }

    /// Integral from 0 to `t` of `A sin(2πft + φ)`.
    fn integral(&self, t: f64) -> f64 {
        let w = self.omega();
        if w == 0.0 {
            return self.amplitude * self.phase.sin() * t;
        }
        self.amplitude / w * (self.phase.cos() - (w * t + self.phase).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryProfile {
    /// Position terms per world axis (m).
    pub position: [Vec<SineTerm>; 3],
    /// Roll, pitch and yaw rate terms (rad/s).
    pub euler_rate: [Vec<SineTerm>; 3],
    /// Session duration, s.
    pub duration: f64,
    pub imu_rate: f64,
    pub slow_pose_rate: f64,
    pub rng_seed: u64,
}

/// Ranges used by [`TrajectoryProfile::random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileOptions {
    pub duration: f64,
    pub imu_rate: f64,
    pub slow_pose_rate: f64,
    pub terms_per_axis: usize,
    pub position_amplitude: (f64, f64),
    pub angular_rate_amplitude: (f64, f64),
    pub frequency: (f64, f64),
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            duration: 30.0,
            imu_rate: 500.0,
            slow_pose_rate: 20.0,
            terms_per_axis: 3,
            position_amplitude: (0.02, 0.15),
            angular_rate_amplitude: (0.05, 0.4),
            frequency: (0.1, 0.6),
        }
    }
}

/// Analytic ground-truth kinematics at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub orientation: Quaternion,
    /// Body-frame angular velocity, rad/s.
    pub angular_velocity: Vec3,
}

impl TrajectoryProfile {
    /// A profile with no motion at all.
    pub fn stationary(duration: f64, imu_rate: f64, slow_pose_rate: f64) -> Self {
        Self {
            position: Default::default(),
            euler_rate: Default::default(),
            duration,
            imu_rate,
            slow_pose_rate,
            rng_seed: 0,
        }
    }

    pub fn random(seed: u64, opts: &ProfileOptions) -> Self {
        let mut rng = stream_rng(seed, Stream::Profile, 0);
        let mut draw = |amp: (f64, f64)| -> Vec<SineTerm> {
            (0..opts.terms_per_axis)
                .map(|_| SineTerm {
                    amplitude: rng.random_range(amp.0..=amp.1),
                    frequency: rng.random_range(opts.frequency.0..=opts.frequency.1),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                })
                .collect()
        };
        let position = [draw(opts.position_amplitude), draw(opts.position_amplitude), draw(opts.position_amplitude)];
        let euler_rate =
            [draw(opts.angular_rate_amplitude), draw(opts.angular_rate_amplitude), draw(opts.angular_rate_amplitude)];
        Self {
            position,
            euler_rate,
            duration: opts.duration,
            imu_rate: opts.imu_rate,
            slow_pose_rate: opts.slow_pose_rate,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidArgument(format!("duration {}", self.duration)));
        }
        if !(self.slow_pose_rate > 0.0 && self.imu_rate > self.slow_pose_rate) {
            return Err(Error::InvalidArgument(format!(
                "rates must satisfy imu_rate > slow_pose_rate > 0 (got {} / {})",
                self.imu_rate, self.slow_pose_rate
            )));
        }
        let ratio = self.imu_rate / self.slow_pose_rate;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("imu_rate / slow_pose_rate must be an integer (got {ratio})")));
        }
        let finite = self
            .position
            .iter()
            .chain(self.euler_rate.iter())
            .flatten()
            .all(|t| t.amplitude.is_finite() && t.frequency.is_finite() && t.phase.is_finite());
        if !finite {
            return Err(Error::NonFinite("trajectory profile terms"));
        }
        Ok(())
    }

    /// IMU samples per slow-pose window (K).
    pub fn samples_per_window(&self) -> usize {
        (self.imu_rate / self.slow_pose_rate).round() as usize
    }

    /// Index of the last IMU sample (samples are `0..=last`).
    pub fn last_sample_index(&self) -> usize {
        (self.duration * self.imu_rate).floor() as usize
    }

    pub fn sample_time(&self, index: usize) -> f64 {
        index as f64 / self.imu_rate
    }

    /// Number of complete offload rounds in the session.
    pub fn num_rounds(&self) -> usize {
        self.last_sample_index() / self.samples_per_window()
    }

    /// Timestamp of the slow pose closing round `round_id` (1-based).
    pub fn round_time(&self, round_id: u64) -> f64 {
        self.sample_time(round_id as usize * self.samples_per_window())
    }

    fn euler(&self, t: f64) -> ([f64; 3], [f64; 3]) {
        let mut angle = [0.0; 3];
        let mut rate = [0.0; 3];
        for axis in 0..3 {
            for term in &self.euler_rate[axis] {
                angle[axis] += term.integral(t);
                rate[axis] += term.eval(t).0;
            }
        }
        (angle, rate)
    }
}

/// Closed-form ground truth at `t`.
pub fn ground_truth_at(profile: &TrajectoryProfile, t: f64) -> Result<GroundTruth> {
    if !(0.0..=profile.duration).contains(&t) {
        return Err(Error::TimeOutOfRange { t, duration: profile.duration });
    }
    let mut p = [0.0; 3];
    let mut v = [0.0; 3];
    let mut a = [0.0; 3];
    for axis in 0..3 {
        for term in &profile.position[axis] {
            let (x, dx, ddx) = term.eval(t);
            p[axis] += x;
            v[axis] += dx;
            a[axis] += ddx;
        }
    }
    let ([roll, pitch, yaw], [droll, dpitch, dyaw]) = profile.euler(t);
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    // body rates for R = Rz(yaw) Ry(pitch) Rx(roll)
    let angular_velocity = Vec3::new(droll - dyaw * sp, dpitch * cr + dyaw * cp * sr, -dpitch * sr + dyaw * cp * cr);
    Ok(GroundTruth {
        position: Vec3::from_array(p),
        velocity: Vec3::from_array(v),
        acceleration: Vec3::from_array(a),
        orientation: Quaternion::from_euler_zyx(roll, pitch, yaw),
        angular_velocity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    /// Specific force in the body frame (gravity included), m/s².
    pub accel: Vec3,
    /// Body-frame angular rate, rad/s.
    pub gyro: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoiseModel {
    pub accel_noise_std: f64,
    pub gyro_noise_std: f64,
    pub accel_bias: Vec3,
    pub gyro_bias: Vec3,
    /// Bias random-walk density (units/s per √s); applied to both sensors.
    pub bias_random_walk_std: f64,
}

impl ImuNoiseModel {
    pub fn noiseless() -> Self {
        Self {
            accel_noise_std: 0.0,
            gyro_noise_std: 0.0,
            accel_bias: Vec3::ZERO,
            gyro_bias: Vec3::ZERO,
            bias_random_walk_std: 0.0,
        }
    }

    /// Default noise levels with a per-session constant bias drawn from `seed`.
    pub fn with_random_bias(seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::ImuNoise, u64::MAX);
        let mut v = |scale: f64| {
            Vec3::new(
                rng.random_range(-scale..=scale),
                rng.random_range(-scale..=scale),
                rng.random_range(-scale..=scale),
            )
        };
        let accel_bias = v(0.05);
        let gyro_bias = v(0.005);
        Self { accel_bias, gyro_bias, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [self.accel_noise_std, self.gyro_noise_std, self.bias_random_walk_std];
        if stds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument("noise stds must be finite and >= 0".into()));
        }
        if !self.accel_bias.is_finite() || !self.gyro_bias.is_finite() {
            return Err(Error::NonFinite("imu bias"));
        }
        Ok(())
    }
}

impl Default for ImuNoiseModel {
    fn default() -> Self {
        Self {
            accel_noise_std: 0.02,
            gyro_noise_std: 0.002,
            accel_bias: Vec3::new(0.03, -0.02, 0.04),
            gyro_bias: Vec3::new(0.002, -0.001, 0.0015),
            bias_random_walk_std: 0.0,
        }
    }
}

/// Synthesized IMU stream plus the true sensor biases at every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrack {
    pub samples: Vec<ImuSample>,
    pub bias_acc: Vec<Vec3>,
    pub bias_gyro: Vec<Vec3>,
}

impl SensorTrack {
    /// Index of the sample with timestamp `t` (samples are on a regular grid).
    pub fn index_at(&self, imu_rate: f64, t: f64) -> Option<usize> {
        let i = (t * imu_rate).round();
        (i >= 0.0 && (i as usize) < self.samples.len()).then_some(i as usize)
    }
}

/// Generates the IMU stream for a profile. Deterministic given `profile.rng_seed`.
pub fn synthesize_imu(profile: &TrajectoryProfile, noise: &ImuNoiseModel) -> Result<SensorTrack> {
    profile.validate()?;
    noise.validate()?;
    let n = profile.last_sample_index() + 1;
    let mut rng = stream_rng(profile.rng_seed, Stream::ImuNoise, 0);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut gauss = |std: f64| -> Vec3 {
        if std == 0.0 {
            return Vec3::ZERO;
        }
        Vec3::new(unit.sample(&mut rng), unit.sample(&mut rng), unit.sample(&mut rng)).scale(std)
    };
    let dt = 1.0 / profile.imu_rate;
    let walk = noise.bias_random_walk_std * dt.sqrt();

    let mut samples = Vec::with_capacity(n);
    let mut bias_acc = Vec::with_capacity(n);
    let mut bias_gyro = Vec::with_capacity(n);
    let (mut ba, mut bg) = (noise.accel_bias, noise.gyro_bias);
    for k in 0..n {
        let t = profile.sample_time(k);
        let gt = ground_truth_at(profile, t)?;
        if k > 0 {
            ba += gauss(walk);
            bg += gauss(walk);
        }
        let specific = gt.orientation.inverse_rotate(gt.acceleration - GRAVITY);
        let accel = specific + ba + gauss(noise.accel_noise_std);
        let gyro = gt.angular_velocity + bg + gauss(noise.gyro_noise_std);
        samples.push(ImuSample { timestamp: t, accel, gyro });
        bias_acc.push(ba);
        bias_gyro.push(bg);
    }
    Ok(SensorTrack { samples, bias_acc, bias_gyro })
}
