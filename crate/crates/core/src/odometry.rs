//! Client fast-pose dead reckoning and the server-side slow-pose emulator.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{quat_integrate, FastPose, Quaternion, SlowPoseState, Vec3};
use crate::motion::{ground_truth_at, ImuSample, TrajectoryProfile, GRAVITY};
use crate::policy::Decision;
use crate::rng::{stream_rng, Stream};

/// Fast poses integrated over one offload window, plus the IMU that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FastPoseWindow {
    pub window_index: u64,
    pub anchor: SlowPoseState,
    pub poses: Vec<FastPose>,
    pub imu: Vec<ImuSample>,
}

impl FastPoseWindow {
    pub fn is_degenerate(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn last_pose(&self) -> Option<&FastPose> {
        self.poses.last()
    }
}

/// Strapdown integration of `imu` starting from `anchor`.
///
/// Emits one fast pose per IMU sample. See [`integrate_window`] for the
/// variant that carries the previous window's last sample.
pub fn integrate_fast_poses(anchor: &SlowPoseState, imu: &[ImuSample]) -> Result<FastPoseWindow> {
    integrate_window(anchor.round_id + 1, anchor, None, imu)
}

/// Midpoint (trapezoidal) strapdown integration.
///
/// `prev` is the IMU sample taken at the anchor time, if known; without it
/// the first sample is held over the first interval. Gyro increments use a
/// two-sample coning correction.
pub fn integrate_window(
    window_index: u64,
    anchor: &SlowPoseState,
    prev: Option<&ImuSample>,
    imu: &[ImuSample],
) -> Result<FastPoseWindow> {
    for (i, pair) in imu.windows(2).enumerate() {
        if !(pair[1].timestamp >= pair[0].timestamp) {
            return Err(Error::UnsortedTimestamps { index: i + 1 });
        }
    }
    if let Some(first) = imu.first() {
        if first.timestamp < anchor.timestamp {
            return Err(Error::UnsortedTimestamps { index: 0 });
        }
    }

    let (ba, bg) = (anchor.bias_acc, anchor.bias_gyro);
    let mut t = anchor.timestamp;
    let mut p = anchor.position;
    let mut q = anchor.orientation;
    let mut v = anchor.velocity;
    let mut last = prev.copied();
    let mut poses = Vec::with_capacity(imu.len());

    for s in imu {
        let a_sample = last.unwrap_or(*s);
        let dt = s.timestamp - t;
        if dt > 0.0 {
            let wa = a_sample.gyro - bg;
            let wb = s.gyro - bg;
            let rot = (wa + wb).scale(0.5 * dt) + wa.cross(wb).scale(dt * dt / 12.0);
            let q_next = quat_integrate(q, rot.scale(1.0 / dt), dt)?;
            let acc_a = q.rotate(a_sample.accel - ba) + GRAVITY;
            let acc_b = q_next.rotate(s.accel - ba) + GRAVITY;
            let v_next = v + (acc_a + acc_b).scale(0.5 * dt);
            p += (v + v_next).scale(0.5 * dt);
            v = v_next;
            q = q_next;
            t = s.timestamp;
        }
        poses.push(FastPose { timestamp: s.timestamp, position: p, orientation: q, velocity: v });
        last = Some(*s);
    }

    Ok(FastPoseWindow { window_index, anchor: *anchor, poses, imu: imu.to_vec() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VioEmulatorConfig {
    pub pos_noise_std: f64,
    pub ang_noise_std: f64,
    pub vel_noise_std: f64,
    pub bias_report_noise_std: f64,
    pub rng_seed: u64,
}

/// Round-to-round jitter of a converged filter, not its absolute drift.
impl Default for VioEmulatorConfig {
    fn default() -> Self {
        Self {
            pos_noise_std: 0.001,
            ang_noise_std: 0.0005,
            vel_noise_std: 0.003,
            bias_report_noise_std: 0.001,
            rng_seed: 0,
        }
    }
}

impl VioEmulatorConfig {
    pub fn noiseless(rng_seed: u64) -> Self {
        Self { pos_noise_std: 0.0, ang_noise_std: 0.0, vel_noise_std: 0.0, bias_report_noise_std: 0.0, rng_seed }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [self.pos_noise_std, self.ang_noise_std, self.vel_noise_std, self.bias_report_noise_std];
        if stds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument("VIO noise stds must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Stand-in for the server's VIO output: ground truth at `t` plus zero-mean
/// Gaussian noise, deterministic per `(cfg.rng_seed, round_id)`.
///
/// `true_bias` is the simulated `(accelerometer, gyroscope)` bias at `t`.
pub fn emulate_slow_pose(
    profile: &TrajectoryProfile,
    t: f64,
    cfg: &VioEmulatorConfig,
    round_id: u64,
    true_bias: (Vec3, Vec3),
) -> Result<SlowPoseState> {
    let gt = ground_truth_at(profile, t)?;
    let mut rng = stream_rng(cfg.rng_seed, Stream::Vio, round_id);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    // always draw all 15 numbers so each channel's noise is independent of the others' stds
    let mut draw = |std: f64| {
        let n = Vec3::new(unit.sample(&mut rng), unit.sample(&mut rng), unit.sample(&mut rng));
        n.scale(std)
    };
    let dp = draw(cfg.pos_noise_std);
    let dtheta = draw(cfg.ang_noise_std);
    let dv = draw(cfg.vel_noise_std);
    let dba = draw(cfg.bias_report_noise_std);
    let dbg = draw(cfg.bias_report_noise_std);

    let orientation = if cfg.ang_noise_std == 0.0 {
        gt.orientation
    } else {
        (gt.orientation * Quaternion::from_rotation_vector(dtheta)).normalized()
    };
    Ok(SlowPoseState {
        timestamp: t,
        position: gt.position + dp,
        orientation,
        velocity: gt.velocity + dv,
        bias_acc: true_bias.0 + dba,
        bias_gyro: true_bias.1 + dbg,
        round_id,
    })
}

/// Next integration anchor after the policy has ruled on `incoming`.
///
/// Accept and force-pass adopt the incoming slow pose wholesale. A drop keeps
/// dead reckoning going: the anchor moves to the window's last fast pose and
/// keeps the previous bias estimates.
pub fn reanchor(window: &FastPoseWindow, incoming: &SlowPoseState, decision: Decision) -> SlowPoseState {
    match decision {
        Decision::Accept | Decision::ForcePass => {
            let mut s = *incoming;
            s.orientation = s.orientation.normalized();
            s
        }
        Decision::Drop => advance_anchor(window),
    }
}

/// The anchor carried forward by dead reckoning alone.
pub fn advance_anchor(window: &FastPoseWindow) -> SlowPoseState {
    match window.last_pose() {
        Some(f) => SlowPoseState {
            timestamp: f.timestamp,
            position: f.position,
            orientation: f.orientation.normalized(),
            velocity: f.velocity,
            bias_acc: window.anchor.bias_acc,
            bias_gyro: window.anchor.bias_gyro,
            round_id: window.window_index,
        },
        None => window.anchor,
    }
}
