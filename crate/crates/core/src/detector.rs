//! Per-round detection pipeline: features, preprocessing, inference, policy.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::autoencoder::ModelBundle;
use crate::error::{Error, Result};
use crate::features::{self, FeatureVector};
use crate::geom::SlowPoseState;
use crate::odometry::FastPoseWindow;
use crate::policy::{classify, classify_degenerate, PolicyState, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DefenseMode {
    /// Every slow pose is adopted and nothing is scored.
    #[default]
    Off,
    /// Every slow pose is scored and classified but all are adopted.
    Passive,
    /// Verdicts decide which slow poses are adopted.
    On,
}

impl fmt::Display for DefenseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DefenseMode::Off => "off",
            DefenseMode::Passive => "passive",
            DefenseMode::On => "on",
        })
    }
}

impl FromStr for DefenseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(DefenseMode::Off),
            "passive" => Ok(DefenseMode::Passive),
            "on" => Ok(DefenseMode::On),
            other => Err(Error::Config(format!("unknown defense mode {other:?} (off|passive|on)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimings {
    pub features: Duration,
    pub preprocess: Duration,
    pub inference: Duration,
    pub postprocess: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.features + self.preprocess + self.inference + self.postprocess
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// `None` when the window was degenerate.
    pub features: Option<FeatureVector>,
    pub verdict: Verdict,
    pub timings: StageTimings,
}

/// Stateful wrapper around a loaded bundle and the policy state machine.
#[derive(Debug, Clone)]
pub struct Detector {
    bundle: Arc<ModelBundle>,
    state: PolicyState,
}

impl Detector {
    pub fn new(bundle: Arc<ModelBundle>) -> Result<Self> {
        bundle.check_schema()?;
        Ok(Self { bundle, state: PolicyState::default() })
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn state(&self) -> PolicyState {
        self.state
    }

    /// Scores `incoming` against the window that preceded it and advances the policy.
    pub fn step(
        &mut self,
        window: &FastPoseWindow,
        incoming: &SlowPoseState,
        prev_accepted: &SlowPoseState,
    ) -> Result<Detection> {
        let mut timings = StageTimings::default();
        let t0 = Instant::now();
        let feats = match features::extract(window, incoming, prev_accepted) {
            Ok(f) => f,
            Err(Error::DegenerateWindow { .. }) => {
                let (verdict, next) = classify_degenerate(&self.bundle.thresholds, self.state);
                self.state = next;
                timings.features = t0.elapsed();
                return Ok(Detection { features: None, verdict, timings });
            }
            Err(e) => return Err(e),
        };
        let t1 = Instant::now();
        let reduced = self.bundle.reduce(&feats)?;
        let t2 = Instant::now();
        let mse = self.bundle.score_reduced(&reduced)?;
        let t3 = Instant::now();
        let (verdict, next) = classify(mse, &self.bundle.thresholds, self.state);
        self.state = next;
        let t4 = Instant::now();
        timings.features = t1 - t0;
        timings.preprocess = t2 - t1;
        timings.inference = t3 - t2;
        timings.postprocess = t4 - t3;
        Ok(Detection { features: Some(feats), verdict, timings })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defense_mode_parses() {
        for m in [DefenseMode::Off, DefenseMode::Passive, DefenseMode::On] {
            assert_eq!(m.to_string().parse::<DefenseMode>().unwrap(), m);
        }
        assert!("maybe".parse::<DefenseMode>().is_err());
    }
}
