//! Device side: dead reckoning between offload rounds, detection, re-anchoring.

use std::sync::Arc;
use std::time::Duration;

use super::channel::Channel;
use super::wire::{Message, SensorBatch, SessionStart, WireError};
use crate::attack::SpoofRecord;
use crate::autoencoder::ModelBundle;
use crate::detector::{DefenseMode, Detector, StageTimings};
use crate::error::{Error, Result};
use crate::features;
use crate::geom::SlowPoseState;
use crate::motion::{ground_truth_at, synthesize_imu, ImuNoiseModel, TrajectoryProfile};
use crate::odometry::{integrate_window, reanchor};
use crate::policy::Decision;
use crate::session::{RoundLog, SessionLog};

pub const DEFAULT_ROUND_TIMEOUT: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub session_seed: u64,
    pub profile: TrajectoryProfile,
    pub noise: ImuNoiseModel,
    pub defense: DefenseMode,
    pub round_timeout: Duration,
}

#[derive(Debug, Clone)]
pub struct ClientOutput {
    pub log: SessionLog,
    /// Detection stage timings for every scored round (kept out of the log so
    /// logs stay comparable across runs and transports).
    pub timings: Vec<StageTimings>,
    pub lost_rounds: usize,
}

/// Waits for the reply to `round_id`, discarding stale replies to earlier rounds.
fn await_reply(ch: &mut impl Channel, round_id: u64, timeout: Duration) -> Result<Option<SlowPoseState>> {
    loop {
        match ch.recv(Some(timeout)) {
            Ok(Message::SlowPose(s)) if s.round_id == round_id => return Ok(Some(s)),
            Ok(Message::SlowPose(s)) if s.round_id < round_id => {
                log::debug!("discarding stale reply for round {}", s.round_id)
            }
            Ok(other) => {
                return Err(Error::from(WireError::Malformed {
                    kind: "reply",
                    detail: format!("unexpected {:?} while waiting for round {round_id}", other.kind()),
                })
                .in_round(round_id))
            }
            Err(Error::Wire(WireError::Timeout { .. })) => {
                log::warn!("round {round_id}: no reply within {timeout:?}; continuing on dead reckoning");
                return Ok(None);
            }
            Err(e) => return Err(e.in_round(round_id)),
        }
    }
}

pub fn run_client(ch: &mut impl Channel, cfg: &ClientConfig, bundle: Option<Arc<ModelBundle>>) -> Result<ClientOutput> {
    let profile = &cfg.profile;
    profile.validate()?;
    let mut detector = match (cfg.defense, bundle) {
        (DefenseMode::Off, _) => None,
        (_, Some(b)) => Some(Detector::new(b)?),
        (mode, None) => return Err(Error::Config(format!("defense {mode} needs a model bundle"))),
    };

    let track = synthesize_imu(profile, &cfg.noise)?;
    let gt0 = ground_truth_at(profile, 0.0)?;
    let mut anchor = SlowPoseState {
        timestamp: 0.0,
        position: gt0.position,
        orientation: gt0.orientation,
        velocity: gt0.velocity,
        bias_acc: track.bias_acc[0],
        bias_gyro: track.bias_gyro[0],
        round_id: 0,
    };
    let mut prev_accepted = anchor;

    ch.send(&Message::SessionStart(SessionStart {
        session_seed: cfg.session_seed,
        profile: profile.clone(),
        noise: cfg.noise,
    }))?;

    let k = profile.samples_per_window();
    let mut rounds = Vec::with_capacity(profile.num_rounds());
    let mut timings = Vec::new();
    let mut lost = 0;
    for r in 1..=profile.num_rounds() as u64 {
        let lo = (r as usize - 1) * k;
        let imu = &track.samples[lo + 1..=lo + k];
        let window = integrate_window(r, &anchor, Some(&track.samples[lo]), imu).map_err(|e| e.in_round(r))?;
        let send_ts = imu.last().map_or(anchor.timestamp, |s| s.timestamp);
        ch.send(&Message::SensorBatch(SensorBatch { round_id: r, send_ts, samples: imu.to_vec() }))
            .map_err(|e| e.in_round(r))?;
        let reply = await_reply(ch, r, cfg.round_timeout)?;

        let mut round = RoundLog {
            round_id: r,
            anchor,
            fast_poses: window.poses.clone(),
            send_ts,
            n_samples: imu.len(),
            received: reply,
            spoof: None,
            features: None,
            verdict: None,
            decision: Decision::Drop,
        };
        let Some(incoming) = reply else {
            lost += 1;
            anchor = reanchor(&window, &anchor, Decision::Drop);
            rounds.push(round);
            continue;
        };

        let decision = match detector.as_mut() {
            None => {
                round.features = match features::extract(&window, &incoming, &prev_accepted) {
                    Ok(f) => Some(f),
                    Err(Error::DegenerateWindow { .. }) => None,
                    Err(e) => return Err(e.in_round(r)),
                };
                Decision::Accept
            }
            Some(det) => {
                let d = det.step(&window, &incoming, &prev_accepted).map_err(|e| e.in_round(r))?;
                timings.push(d.timings);
                round.features = d.features;
                round.verdict = Some(d.verdict);
                match cfg.defense {
                    DefenseMode::On => d.verdict.decision,
                    _ => Decision::Accept,
                }
            }
        };
        round.decision = decision;
        anchor = reanchor(&window, &incoming, decision);
        if decision.adopts_pose() {
            prev_accepted = incoming;
        }
        rounds.push(round);
    }

    ch.send(&Message::SessionEnd(Vec::new()))?;
    let records: Vec<SpoofRecord> = loop {
        match ch.recv(Some(cfg.round_timeout * 5))? {
            Message::SessionEnd(r) => break r,
            Message::SlowPose(_) => continue,
            other => {
                return Err(WireError::Malformed {
                    kind: "reply",
                    detail: format!("expected SessionEnd, got {:?}", other.kind()),
                }
                .into())
            }
        }
    };

    let mut log = SessionLog {
        session_seed: cfg.session_seed,
        defense: cfg.defense,
        profile: profile.clone(),
        noise: cfg.noise,
        imu: track.samples,
        rounds,
    };
    log.attach_spoof_records(&records);
    Ok(ClientOutput { log, timings, lost_rounds: lost })
}
