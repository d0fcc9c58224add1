//! TOML configuration file. Every key is optional; the layering order is
//! command line, then this file, then `ILLIXR_VIO_SPOOF_*` variables, then defaults.
//!
//! ```toml
//! [attack]
//! probability = 0.5
//! angle_drift = 0.2
//! mode = "cumulative"
//!
//! [session]
//! duration = 30.0
//! round_timeout_ms = 1000
//!
//! [vio]
//! pos_noise_std = 0.001
//!
//! [train]
//! max_epochs = 200
//! rng_seed = 7
//! ```

use std::path::Path;
use std::time::Duration;

use serde::Deserialize;

use crate::attack::{AttackConfig, PartialAttackConfig};
use crate::autoencoder::TrainConfig;
use crate::error::{Error, Result};
use crate::motion::ProfileOptions;
use crate::odometry::VioEmulatorConfig;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSection {
    pub duration: Option<f64>,
    pub imu_rate: Option<f64>,
    pub slow_pose_rate: Option<f64>,
    pub round_timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VioSection {
    pub pos_noise_std: Option<f64>,
    pub ang_noise_std: Option<f64>,
    pub vel_noise_std: Option<f64>,
    pub bias_report_noise_std: Option<f64>,
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub validation_split: Option<f64>,
    pub latent_dim: Option<usize>,
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub attack: PartialAttackConfig,
    #[serde(default)]
    pub session: SessionSection,
    #[serde(default)]
    pub vio: VioSection,
    #[serde(default)]
    pub train: TrainSection,
}

fn set<T: Copy>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Attack settings: defaults, then `env`, then this file, then `cli`.
    pub fn attack(
        &self,
        base: AttackConfig,
        env: &PartialAttackConfig,
        cli: &PartialAttackConfig,
    ) -> Result<AttackConfig> {
        base.layered(&[env, &self.attack, cli])
    }

    pub fn profile_options(&self) -> ProfileOptions {
        let mut o = ProfileOptions::default();
        set(&mut o.duration, self.session.duration);
        set(&mut o.imu_rate, self.session.imu_rate);
        set(&mut o.slow_pose_rate, self.session.slow_pose_rate);
        o
    }

    pub fn round_timeout(&self) -> Option<Duration> {
        self.session.round_timeout_ms.map(Duration::from_millis)
    }

    pub fn vio(&self) -> Result<VioEmulatorConfig> {
        let mut v = VioEmulatorConfig::default();
        set(&mut v.pos_noise_std, self.vio.pos_noise_std);
        set(&mut v.ang_noise_std, self.vio.ang_noise_std);
        set(&mut v.vel_noise_std, self.vio.vel_noise_std);
        set(&mut v.bias_report_noise_std, self.vio.bias_report_noise_std);
        set(&mut v.rng_seed, self.vio.rng_seed);
        v.validate()?;
        Ok(v)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let mut t = TrainConfig::default();
        let s = &self.train;
        set(&mut t.max_epochs, s.max_epochs);
        set(&mut t.patience, s.patience);
        set(&mut t.batch_size, s.batch_size);
        set(&mut t.learning_rate, s.learning_rate);
        set(&mut t.validation_split, s.validation_split);
        set(&mut t.latent_dim, s.latent_dim);
        set(&mut t.rng_seed, s.rng_seed);
        t.validate()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{AttackMode, ENV_ANGLE_DRIFT, ENV_POSITION_DRIFT, ENV_PROBABILITY};

    #[test]
    fn empty_file_is_all_defaults() {
        let c = FileConfig::parse("").unwrap();
        assert_eq!(c, FileConfig::default());
        assert_eq!(c.profile_options(), ProfileOptions::default());
        assert_eq!(c.vio().unwrap(), VioEmulatorConfig::default());
        assert_eq!(c.train().unwrap(), TrainConfig::default());
    }

    #[test]
    fn precedence_cli_over_file_over_env() {
        let file =
            FileConfig::parse("[attack]\nprobability = 0.3\nangle_drift = 0.4\nmode = \"cumulative\"\n").unwrap();
        let env = PartialAttackConfig::from_env_with(|k| match k {
            k if k == ENV_PROBABILITY => Some("0.9".into()),
            k if k == ENV_ANGLE_DRIFT => Some("0.7".into()),
            k if k == ENV_POSITION_DRIFT => Some("0.05".into()),
            _ => None,
        })
        .unwrap();
        let cli = PartialAttackConfig { probability: Some(0.1), ..Default::default() };
        let a = file.attack(AttackConfig::default(), &env, &cli).unwrap();
        assert_eq!(a.probability, 0.1);
        assert_eq!(a.angle_drift, 0.4);
        assert_eq!(a.position_drift, 0.05);
        assert_eq!(a.mode, AttackMode::Cumulative);
        assert_eq!(a.velocity_drift, AttackConfig::default().velocity_drift);
    }

    #[test]
    fn sections_apply() {
        let c = FileConfig::parse(
            "[session]\nduration = 5.0\nround_timeout_ms = 250\n[vio]\nang_noise_std = 0.0\n[train]\nmax_epochs = 3\n",
        )
        .unwrap();
        assert_eq!(c.profile_options().duration, 5.0);
        assert_eq!(c.round_timeout(), Some(Duration::from_millis(250)));
        assert_eq!(c.vio().unwrap().ang_noise_std, 0.0);
        assert_eq!(c.train().unwrap().max_epochs, 3);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(FileConfig::parse("[attack]\nprobabilty = 0.5\n"), Err(Error::Config(_))));
        let c = FileConfig::parse("[attack]\nprobability = 1.5\n").unwrap();
        assert!(c.attack(AttackConfig::default(), &Default::default(), &Default::default()).is_err());
        assert!(FileConfig::parse("[vio]\npos_noise_std = -1.0\n").unwrap().vio().is_err());
    }
}
