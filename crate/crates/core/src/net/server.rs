//! Server side: emulated VIO plus the adversary sitting on its output.

use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::thread;

use super::channel::{Channel, TcpChannel};
use super::wire::{Message, SensorBatch, SessionStart, WireError};
use crate::attack::{AttackConfig, Attacker, SpoofRecord};
use crate::error::{Error, Result};
use crate::geom::SlowPoseState;
use crate::motion::{synthesize_imu, SensorTrack, TrajectoryProfile};
use crate::odometry::{emulate_slow_pose, VioEmulatorConfig};
use crate::rng::{derive_seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerConfig {
    pub vio: VioEmulatorConfig,
    pub attack: AttackConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSummary {
    pub session_seed: u64,
    pub rounds_served: u64,
    /// Clean slow poses before the attacker touched them.
    pub clean_poses: Vec<SlowPoseState>,
    pub spoof_records: Vec<SpoofRecord>,
}

/// Per-connection state. Seeds are mixed with the session seed so one server
/// can host many distinct sessions; the attack stream depends only on the
/// configured seed and the session seed, not on the probability.
pub struct ServerSession {
    profile: TrajectoryProfile,
    track: SensorTrack,
    vio: VioEmulatorConfig,
    attacker: Attacker,
    summary: SessionSummary,
}

impl ServerSession {
    pub fn start(cfg: &ServerConfig, start: &SessionStart) -> Result<Self> {
        cfg.vio.validate()?;
        let track = synthesize_imu(&start.profile, &start.noise)?;
        let vio =
            VioEmulatorConfig { rng_seed: derive_seed(cfg.vio.rng_seed, Stream::Vio, start.session_seed), ..cfg.vio };
        let attack = AttackConfig {
            rng_seed: derive_seed(cfg.attack.rng_seed, Stream::AttackCoin, start.session_seed),
            ..cfg.attack
        };
        Ok(Self {
            profile: start.profile.clone(),
            track,
            vio,
            attacker: Attacker::new(attack)?,
            summary: SessionSummary {
                session_seed: start.session_seed,
                rounds_served: 0,
                clean_poses: Vec::new(),
                spoof_records: Vec::new(),
            },
        })
    }

    /// Slow pose for the batch's end timestamp, possibly spoofed.
    pub fn handle_batch(&mut self, b: &SensorBatch) -> Result<SlowPoseState> {
        let round_id = b.round_id;
        let t = match b.samples.last() {
            Some(s) => s.timestamp,
            None => self.profile.round_time(round_id),
        };
        let idx = self
            .track
            .index_at(self.profile.imu_rate, t)
            .ok_or(Error::TimeOutOfRange { t, duration: self.profile.duration })
            .map_err(|e| e.in_round(round_id))?;
        let bias = (self.track.bias_acc[idx], self.track.bias_gyro[idx]);
        let clean = emulate_slow_pose(&self.profile, t, &self.vio, round_id, bias).map_err(|e| e.in_round(round_id))?;
        let (sent, record) = self.attacker.process(&clean);
        self.summary.rounds_served += 1;
        self.summary.clean_poses.push(clean);
        self.summary.spoof_records.push(record);
        Ok(sent)
    }

    pub fn finish(self) -> SessionSummary {
        self.summary
    }
}

/// Runs one session over `ch`: `SessionStart`, batches, `SessionEnd`.
/// The closing `SessionEnd` reply carries the spoof log.
pub fn serve_session(ch: &mut impl Channel, cfg: &ServerConfig) -> Result<SessionSummary> {
    let start = match ch.recv(None)? {
        Message::SessionStart(s) => s,
        other => {
            return Err(WireError::Malformed {
                kind: "session",
                detail: format!("expected SessionStart, got {:?}", other.kind()),
            }
            .into())
        }
    };
    let mut session = ServerSession::start(cfg, &start)?;
    loop {
        match ch.recv(None)? {
            Message::SensorBatch(b) => {
                let reply = session.handle_batch(&b)?;
                ch.send(&Message::SlowPose(reply)).map_err(|e| e.in_round(b.round_id))?;
            }
            Message::SessionEnd(_) => {
                let summary = session.finish();
                ch.send(&Message::SessionEnd(summary.spoof_records.clone()))?;
                return Ok(summary);
            }
            other => {
                return Err(
                    WireError::Malformed { kind: "session", detail: format!("unexpected {:?}", other.kind()) }.into()
                )
            }
        }
    }
}

pub struct TcpServer {
    listener: TcpListener,
    cfg: ServerConfig,
}

impl TcpServer {
    pub fn bind(addr: impl ToSocketAddrs, cfg: ServerConfig) -> Result<Self> {
        cfg.vio.validate()?;
        cfg.attack.validate()?;
        Ok(Self { listener: TcpListener::bind(addr)?, cfg })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections, one handler thread each. Returns after
    /// `max_sessions` sessions have finished, or never if `None`.
    pub fn serve(&self, max_sessions: Option<usize>) -> Result<Vec<Result<SessionSummary>>> {
        let mut handles = Vec::new();
        for stream in self.listener.incoming() {
            let stream = stream?;
            let cfg = self.cfg;
            let peer = stream.peer_addr().ok();
            handles.push(thread::spawn(move || {
                let mut ch = TcpChannel::new(stream)?;
                let r = serve_session(&mut ch, &cfg);
                match &r {
                    Ok(s) => log::info!("session {} from {peer:?}: {} rounds", s.session_seed, s.rounds_served),
                    Err(e) => log::warn!("session from {peer:?} failed: {e}"),
                }
                r
            }));
            if max_sessions.is_some_and(|m| handles.len() >= m) {
                break;
            }
        }
        Ok(handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidArgument("session thread panicked".into()))))
            .collect())
    }
}

/// Binds `bind_addr` and serves sessions until `max_sessions` have completed.
pub fn run_server(
    bind_addr: impl ToSocketAddrs,
    vio: VioEmulatorConfig,
    attack: AttackConfig,
    max_sessions: Option<usize>,
) -> Result<Vec<Result<SessionSummary>>> {
    TcpServer::bind(bind_addr, ServerConfig { vio, attack })?.serve(max_sessions)
}
