//! Threshold calibration and the accept / drop / force-pass state machine.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Hard anomalies in a row before one is let through.
pub const DEFAULT_FORCE_PASS_LIMIT: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnomalyClass {
    Normal,
    SoftAnomaly,
    HardAnomaly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Accept,
    Drop,
    ForcePass,
}

impl Decision {
    pub fn adopts_pose(self) -> bool {
        matches!(self, Decision::Accept | Decision::ForcePass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub class: AnomalyClass,
    pub decision: Decision,
    pub mse: f64,
    pub hard_streak_after: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub median: f64,
    pub mad: f64,
    pub t_soft: f64,
    /// Raw 98th percentile before the `max(t_soft, ·)` clamp.
    pub t_hard_raw: f64,
    pub t_hard: f64,
}

impl Thresholds {
    pub fn from_parts(t_soft: f64, t_hard_raw: f64) -> Self {
        Self { median: t_soft, mad: 0.0, t_soft, t_hard_raw, t_hard: t_soft.max(t_hard_raw) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyState {
    pub consecutive_hard: u32,
    pub force_pass_limit: u32,
}

impl Default for PolicyState {
    fn default() -> Self {
        Self::new(DEFAULT_FORCE_PASS_LIMIT)
    }
}

impl PolicyState {
    pub fn new(force_pass_limit: u32) -> Self {
        Self { consecutive_hard: 0, force_pass_limit: force_pass_limit.max(1) }
    }
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Median of an already sorted slice.
fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| median_sorted(&sorted(values)))
}

/// Unscaled median absolute deviation.
pub fn mad(values: &[f64]) -> Option<f64> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|x| (x - m).abs()).collect();
    median(&dev)
}

/// Percentile (`q` in `[0, 100]`) by linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let v = sorted(values);
    let h = (v.len() - 1) as f64 * (q / 100.0).clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// Soft threshold `median + 3·MAD`, hard threshold at the 98th percentile.
pub fn calibrate(clean_scores: &[f64]) -> Result<Thresholds> {
    if clean_scores.is_empty() {
        return Err(Error::EmptyInput("calibration scores"));
    }
    if clean_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("calibration scores"));
    }
    if clean_scores.len() < 50 {
        log::warn!("calibrating on only {} scores", clean_scores.len());
    }
    let median = median(clean_scores).expect("non-empty");
    let mad = mad(clean_scores).expect("non-empty");
    let t_soft = median + 3.0 * mad;
    let t_hard_raw = percentile(clean_scores, 98.0).expect("non-empty");
    Ok(Thresholds { median, mad, t_soft, t_hard_raw, t_hard: t_soft.max(t_hard_raw) })
}

/// One step of the policy state machine. Pure: the new state is returned.
pub fn classify(mse: f64, th: &Thresholds, state: PolicyState) -> (Verdict, PolicyState) {
    let limit = state.force_pass_limit.max(1);
    // NaN scores fall through to Hard
    let (class, decision, streak) = if mse < th.t_soft {
        (AnomalyClass::Normal, Decision::Accept, 0)
    } else if mse < th.t_hard {
        (AnomalyClass::SoftAnomaly, Decision::Drop, 0)
    } else if state.consecutive_hard + 1 >= limit {
        (AnomalyClass::HardAnomaly, Decision::ForcePass, 0)
    } else {
        (AnomalyClass::HardAnomaly, Decision::Drop, state.consecutive_hard + 1)
    };
    let next = PolicyState { consecutive_hard: streak, force_pass_limit: limit };
    (Verdict { class, decision, mse, hard_streak_after: streak }, next)
}

/// Verdict for a window that cannot be scored (no fast poses): treated as Hard.
pub fn classify_degenerate(th: &Thresholds, state: PolicyState) -> (Verdict, PolicyState) {
    classify(f64::INFINITY, th, state)
}

impl fmt::Display for AnomalyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyClass::Normal => "normal",
            AnomalyClass::SoftAnomaly => "soft",
            AnomalyClass::HardAnomaly => "hard",
        })
    }
}

impl FromStr for AnomalyClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(AnomalyClass::Normal),
            "soft" => Ok(AnomalyClass::SoftAnomaly),
            "hard" => Ok(AnomalyClass::HardAnomaly),
            other => Err(Error::format("anomaly class", other)),
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Accept => "accept",
            Decision::Drop => "drop",
            Decision::ForcePass => "force_pass",
        })
    }
}

impl FromStr for Decision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accept" => Ok(Decision::Accept),
            "drop" => Ok(Decision::Drop),
            "force_pass" => Ok(Decision::ForcePass),
            other => Err(Error::format("decision", other)),
        }
    }
}
