//! Server-side adversary: Bernoulli-gated additive drift on outgoing slow poses.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geom::{Quaternion, SlowPoseState, Vec3};
use crate::rng::{stream_rng, Stream};

pub const ENV_BIAS_DRIFT: &str = "ILLIXR_VIO_SPOOF_BIAS_DRIFT";
pub const ENV_VELOCITY_DRIFT: &str = "ILLIXR_VIO_SPOOF_VELOCITY_DRIFT";
pub const ENV_POSITION_DRIFT: &str = "ILLIXR_VIO_SPOOF_POSITION_DRIFT";
pub const ENV_ANGLE_DRIFT: &str = "ILLIXR_VIO_SPOOF_ANGLE_DRIFT";
pub const ENV_PROBABILITY: &str = "ILLIXR_VIO_SPOOF_PROBABILITY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    /// Fresh random direction every spoofed round.
    #[default]
    PerRound,
    /// One direction per session; magnitude grows by one step per spoofed round.
    Cumulative,
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackMode::PerRound => "per-round",
            AttackMode::Cumulative => "cumulative",
        })
    }
}

impl FromStr for AttackMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-round" => Ok(AttackMode::PerRound),
            "cumulative" => Ok(AttackMode::Cumulative),
            other => Err(Error::Config(format!("unknown attack mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub probability: f64,
    pub bias_drift: f64,
    /// m/s
    pub velocity_drift: f64,
    /// m
    pub position_drift: f64,
    /// rad
    pub angle_drift: f64,
    pub rng_seed: u64,
    pub mode: AttackMode,
}

impl Default for AttackConfig {
    /// Drift magnitudes of the baseline attack, with spoofing disabled.
    fn default() -> Self {
        Self {
            probability: 0.0,
            bias_drift: 0.05,
            velocity_drift: 0.10,
            position_drift: 0.02,
            angle_drift: 0.20,
            rng_seed: 0,
            mode: AttackMode::PerRound,
        }
    }
}

impl AttackConfig {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn with_probability(mut self, p: f64) -> Self {
        self.probability = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!("spoof probability {} outside [0, 1]", self.probability)));
        }
        let mags = [self.bias_drift, self.velocity_drift, self.position_drift, self.angle_drift];
        if mags.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::Config("drift magnitudes must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Layers partial configs over `self`, later entries winning.
    pub fn layered(mut self, layers: &[&PartialAttackConfig]) -> Result<Self> {
        for l in layers {
            l.apply(&mut self);
        }
        self.validate()?;
        Ok(self)
    }
}

/// The four escalating drift configurations, all at 50% spoofing.
/// Config 1 carries the baseline magnitudes.
pub fn default_configs() -> Vec<AttackConfig> {
    [(0.05, 0.10, 0.02, 0.2), (0.10, 0.30, 0.09, 0.5), (0.60, 0.80, 0.50, 0.9), (1.20, 1.50, 1.00, 2.0)]
        .into_iter()
        .map(|(bias, vel, pos, ang)| AttackConfig {
            probability: 0.5,
            bias_drift: bias,
            velocity_drift: vel,
            position_drift: pos,
            angle_drift: ang,
            ..AttackConfig::default()
        })
        .collect()
}

/// Optional overrides for one configuration source (env, file, or CLI).
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialAttackConfig {
    pub probability: Option<f64>,
    pub bias_drift: Option<f64>,
    pub velocity_drift: Option<f64>,
    pub position_drift: Option<f64>,
    pub angle_drift: Option<f64>,
    pub rng_seed: Option<u64>,
    pub mode: Option<AttackMode>,
}

impl PartialAttackConfig {
    pub fn from_env() -> Result<Self> {
        Self::from_env_with(|k| std::env::var(k).ok())
    }

    pub fn from_env_with(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let num = |key: &str| -> Result<Option<f64>> {
            get(key)
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Config(format!("{key}={v:?}: {e}"))))
                .transpose()
        };
        Ok(Self {
            probability: num(ENV_PROBABILITY)?,
            bias_drift: num(ENV_BIAS_DRIFT)?,
            velocity_drift: num(ENV_VELOCITY_DRIFT)?,
            position_drift: num(ENV_POSITION_DRIFT)?,
            angle_drift: num(ENV_ANGLE_DRIFT)?,
            rng_seed: None,
            mode: None,
        })
    }

    fn apply(&self, cfg: &mut AttackConfig) {
        if let Some(v) = self.probability {
            cfg.probability = v;
        }
        if let Some(v) = self.bias_drift {
            cfg.bias_drift = v;
        }
        if let Some(v) = self.velocity_drift {
            cfg.velocity_drift = v;
        }
        if let Some(v) = self.position_drift {
            cfg.position_drift = v;
        }
        if let Some(v) = self.angle_drift {
            cfg.angle_drift = v;
        }
        if let Some(v) = self.rng_seed {
            cfg.rng_seed = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
    }
}

/// The drift actually added to one slow pose.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpoofDelta {
    pub position: Vec3,
    /// Rotation vector (axis · angle) composed onto the orientation.
    pub angle: Vec3,
    pub velocity: Vec3,
    pub bias_acc: Vec3,
    pub bias_gyro: Vec3,
}

impl SpoofDelta {
    pub fn is_zero(&self) -> bool {
        *self == SpoofDelta::default()
    }

    fn scaled(dirs: &Directions, cfg: &AttackConfig, k: f64) -> Self {
        SpoofDelta {
            position: dirs.position.scale(cfg.position_drift * k),
            angle: dirs.angle.scale(cfg.angle_drift * k),
            velocity: dirs.velocity.scale(cfg.velocity_drift * k),
            bias_acc: dirs.bias_acc.scale(cfg.bias_drift * k),
            bias_gyro: dirs.bias_gyro.scale(cfg.bias_drift * k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpoofRecord {
    pub round_id: u64,
    pub was_spoofed: bool,
    pub applied_delta: SpoofDelta,
}

#[derive(Debug, Clone, Copy)]
struct Directions {
    position: Vec3,
    angle: Vec3,
    velocity: Vec3,
    bias_acc: Vec3,
    bias_gyro: Vec3,
}

impl Directions {
    fn draw(seed: u64, index: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::AttackDirection, index);
        let mut unit = || loop {
            let v = Vec3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            if let Some(u) = v.normalized() {
                break u;
            }
        };
        Directions { position: unit(), angle: unit(), velocity: unit(), bias_acc: unit(), bias_gyro: unit() }
    }
}

/// Per-round Bernoulli draw, deterministic per `(seed, round_id)`.
///
/// The same uniform variate is compared against `p`, so for one seed the set
/// of spoofed rounds grows monotonically with `p`.
pub fn spoof_coin(cfg: &AttackConfig, round_id: u64) -> bool {
    let u: f64 = stream_rng(cfg.rng_seed, Stream::AttackCoin, round_id).random();
    u < cfg.probability
}

pub fn apply_delta(s: &SlowPoseState, d: &SpoofDelta) -> SlowPoseState {
    SlowPoseState {
        position: s.position + d.position,
        orientation: (Quaternion::from_rotation_vector(d.angle) * s.orientation).normalized(),
        velocity: s.velocity + d.velocity,
        bias_acc: s.bias_acc + d.bias_acc,
        bias_gyro: s.bias_gyro + d.bias_gyro,
        ..*s
    }
}

/// Stateless per-round spoofing.
///
/// In cumulative mode this only sees one round, so the delta is a single
/// step along the session direction; use [`Attacker`] for accumulation.
pub fn maybe_spoof(s: &SlowPoseState, cfg: &AttackConfig) -> (SlowPoseState, SpoofRecord) {
    if !spoof_coin(cfg, s.round_id) {
        return (*s, SpoofRecord { round_id: s.round_id, was_spoofed: false, applied_delta: SpoofDelta::default() });
    }
    let dirs = match cfg.mode {
        AttackMode::PerRound => Directions::draw(cfg.rng_seed, s.round_id),
        AttackMode::Cumulative => Directions::draw(cfg.rng_seed, u64::MAX),
    };
    let delta = SpoofDelta::scaled(&dirs, cfg, 1.0);
    (apply_delta(s, &delta), SpoofRecord { round_id: s.round_id, was_spoofed: true, applied_delta: delta })
}

/// Session-scoped attacker; holds the accumulator for cumulative mode.
#[derive(Debug, Clone)]
pub struct Attacker {
    cfg: AttackConfig,
    session_dirs: Directions,
    spoofs_so_far: u64,
}

impl Attacker {
    pub fn new(cfg: AttackConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, session_dirs: Directions::draw(cfg.rng_seed, u64::MAX), spoofs_so_far: 0 })
    }

    pub fn config(&self) -> &AttackConfig {
        &self.cfg
    }

    pub fn process(&mut self, s: &SlowPoseState) -> (SlowPoseState, SpoofRecord) {
        match self.cfg.mode {
            AttackMode::PerRound => maybe_spoof(s, &self.cfg),
            AttackMode::Cumulative => {
                if !spoof_coin(&self.cfg, s.round_id) {
                    return (
                        *s,
                        SpoofRecord { round_id: s.round_id, was_spoofed: false, applied_delta: SpoofDelta::default() },
                    );
                }
                self.spoofs_so_far += 1;
                let delta = SpoofDelta::scaled(&self.session_dirs, &self.cfg, self.spoofs_so_far as f64);
                (apply_delta(s, &delta), SpoofRecord { round_id: s.round_id, was_spoofed: true, applied_delta: delta })
            }
        }
    }
}
