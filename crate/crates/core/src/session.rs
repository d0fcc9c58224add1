//! Session log: everything a device-side run produced, in a replayable text format.
//!
//! One record per line, comma separated, tag first. Floats are written in
//! Rust's shortest round-trip form, so parsing a log restores every value
//! bit-exactly.
//!
//! ```text
//! POSEDRIFT-SESSION,1
//! SESSION,session_seed,defense
//! PROFILE,duration,imu_rate,slow_pose_rate,profile_seed
//! TERM,group,amplitude,frequency,phase          group 0..2 position x,y,z; 3..5 roll,pitch,yaw rate
//! NOISE,accel_std,gyro_std,bax,bay,baz,bgx,bgy,bgz,bias_rw_std
//! IMU,t,ax,ay,az,gx,gy,gz                         every sample of the session
//! ROUND,round_id                                  opens a round; the records below belong to it
//! ANCHOR,<slow pose>                              integration anchor for the window
//! FAST,t,px,py,pz,qw,qx,qy,qz,vx,vy,vz            one per fast pose
//! SENT,send_ts,n_samples
//! RECV,<slow pose> | LOST
//! SPOOF,spoofed,dp[3],dtheta[3],dv[3],dba[3],dbg[3]
//! FEAT,f0,..,f40
//! VERDICT,class,decision,mse,hard_streak_after
//! DECISION,accept|drop|force_pass                 what the device actually did
//! END,n_rounds
//! ```
//!
//! `<slow pose>` is `round_id,t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,bax,bay,baz,bgx,bgy,bgz`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::attack::{SpoofDelta, SpoofRecord};
use crate::detector::DefenseMode;
use crate::error::{Error, Result};
use crate::features::{self, FeatureVector, FEATURE_DIM};
use crate::geom::{FastPose, Quaternion, SlowPoseState, Vec3};
use crate::motion::{ImuNoiseModel, ImuSample, SineTerm, TrajectoryProfile};
use crate::odometry::FastPoseWindow;
use crate::policy::{classify, Decision, PolicyState, Thresholds, Verdict};

pub const LOG_MAGIC: &str = "POSEDRIFT-SESSION";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round_id: u64,
    pub anchor: SlowPoseState,
    pub fast_poses: Vec<FastPose>,
    pub send_ts: f64,
    pub n_samples: usize,
    /// `None` when no reply arrived in time.
    pub received: Option<SlowPoseState>,
    pub spoof: Option<SpoofRecord>,
    pub features: Option<FeatureVector>,
    pub verdict: Option<Verdict>,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub session_seed: u64,
    pub defense: DefenseMode,
    pub profile: TrajectoryProfile,
    pub noise: ImuNoiseModel,
    pub imu: Vec<ImuSample>,
    pub rounds: Vec<RoundLog>,
}

impl SessionLog {
    /// All fast poses of the session in time order.
    pub fn trajectory(&self) -> Vec<FastPose> {
        self.rounds.iter().flat_map(|r| r.fast_poses.iter().copied()).collect()
    }

    /// IMU samples integrated in round `round_id`.
    pub fn window_imu(&self, round_id: u64) -> &[ImuSample] {
        let k = self.profile.samples_per_window();
        let hi = (round_id as usize * k).min(self.imu.len().saturating_sub(1));
        let lo = ((round_id as usize - 1) * k + 1).min(hi + 1);
        &self.imu[lo..=hi]
    }

    pub fn window(&self, round: &RoundLog) -> FastPoseWindow {
        FastPoseWindow {
            window_index: round.round_id,
            anchor: round.anchor,
            poses: round.fast_poses.clone(),
            imu: self.window_imu(round.round_id).to_vec(),
        }
    }

    pub fn feature_rows(&self) -> Vec<FeatureVector> {
        self.rounds.iter().filter_map(|r| r.features).collect()
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        self.rounds.iter().filter_map(|r| r.verdict).collect()
    }

    /// Attaches the server's spoof records to their rounds.
    pub fn attach_spoof_records(&mut self, records: &[SpoofRecord]) {
        for r in records {
            if let Some(round) = self.rounds.iter_mut().find(|x| x.round_id == r.round_id) {
                round.spoof = Some(*r);
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut o = String::with_capacity(256 * (self.imu.len() + self.rounds.len() * 30));
        let w = &mut o;
        line(w, format_args!("{LOG_MAGIC},{LOG_VERSION}"));
        line(w, format_args!("SESSION,{},{}", self.session_seed, self.defense));
        let p = &self.profile;
        line(w, format_args!("PROFILE,{},{},{},{}", p.duration, p.imu_rate, p.slow_pose_rate, p.rng_seed));
        for (g, terms) in p.position.iter().chain(&p.euler_rate).enumerate() {
            for t in terms {
                line(w, format_args!("TERM,{g},{},{},{}", t.amplitude, t.frequency, t.phase));
            }
        }
        let n = &self.noise;
        line(
            w,
            format_args!(
                "NOISE,{},{},{},{},{}",
                n.accel_noise_std,
                n.gyro_noise_std,
                v3(n.accel_bias),
                v3(n.gyro_bias),
                n.bias_random_walk_std
            ),
        );
        for s in &self.imu {
            line(w, format_args!("IMU,{},{},{}", s.timestamp, v3(s.accel), v3(s.gyro)));
        }
        for r in &self.rounds {
            line(w, format_args!("ROUND,{}", r.round_id));
            line(w, format_args!("ANCHOR,{}", slow(&r.anchor)));
            for f in &r.fast_poses {
                line(
                    w,
                    format_args!("FAST,{},{},{},{}", f.timestamp, v3(f.position), quat(f.orientation), v3(f.velocity)),
                );
            }
            line(w, format_args!("SENT,{},{}", r.send_ts, r.n_samples));
            match &r.received {
                Some(s) => line(w, format_args!("RECV,{}", slow(s))),
                None => line(w, format_args!("LOST")),
            }
            if let Some(s) = &r.spoof {
                let d = &s.applied_delta;
                line(
                    w,
                    format_args!(
                        "SPOOF,{},{},{},{},{},{}",
                        s.was_spoofed as u8,
                        v3(d.position),
                        v3(d.angle),
                        v3(d.velocity),
                        v3(d.bias_acc),
                        v3(d.bias_gyro)
                    ),
                );
            }
            if let Some(f) = &r.features {
                let joined: Vec<String> = f.0.iter().map(|x| x.to_string()).collect();
                line(w, format_args!("FEAT,{}", joined.join(",")));
            }
            if let Some(v) = &r.verdict {
                line(w, format_args!("VERDICT,{},{},{},{}", v.class, v.decision, v.mse, v.hard_streak_after));
            }
            line(w, format_args!("DECISION,{}", r.decision));
        }
        line(w, format_args!("END,{}", self.rounds.len()));
        o
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or_else(|| Error::format("session log", "empty"))?;
        let mut hf = head.split(',');
        if hf.next() != Some(LOG_MAGIC) {
            return Err(Error::format("session log", "missing header"));
        }
        let version: u32 = parse(hf.next(), "version")?;
        if version != LOG_VERSION {
            return Err(Error::format("session log", format!("unsupported version {version}")));
        }

        let mut session: Option<(u64, DefenseMode)> = None;
        let mut profile: Option<TrajectoryProfile> = None;
        let mut noise: Option<ImuNoiseModel> = None;
        let mut imu = Vec::new();
        let mut rounds: Vec<RoundLog> = Vec::new();
        let mut ended = None;

        for (ln, l) in lines {
            let err = |detail: String| Error::format("session log", format!("line {}: {detail}", ln + 1));
            let mut f = l.split(',');
            let tag = f.next().unwrap_or("");
            let rest: Vec<&str> = f.collect();
            let cur = rounds.last_mut();
            let need_round = || err(format!("{tag} outside a ROUND block"));
            match tag {
                "SESSION" => {
                    expect_len(&rest, 2).map_err(err)?;
                    session = Some((parse(Some(rest[0]), "seed")?, rest[1].parse()?));
                }
                "PROFILE" => {
                    expect_len(&rest, 4).map_err(err)?;
                    let n = floats(&rest[..3])?;
                    let mut p = TrajectoryProfile::stationary(n[0], n[1], n[2]);
                    p.rng_seed = parse(Some(rest[3]), "profile seed")?;
                    profile = Some(p);
                }
                "TERM" => {
                    expect_len(&rest, 4).map_err(err)?;
                    let g: usize = parse(Some(rest[0]), "term group")?;
                    let v = floats(&rest[1..])?;
                    let p = profile.as_mut().ok_or_else(|| err("TERM before PROFILE".into()))?;
                    let term = SineTerm { amplitude: v[0], frequency: v[1], phase: v[2] };
                    match g {
                        0..=2 => p.position[g].push(term),
                        3..=5 => p.euler_rate[g - 3].push(term),
                        _ => return Err(err(format!("term group {g}"))),
                    }
                }
                "NOISE" => {
                    expect_len(&rest, 9).map_err(err)?;
                    let v = floats(&rest)?;
                    noise = Some(ImuNoiseModel {
                        accel_noise_std: v[0],
                        gyro_noise_std: v[1],
                        accel_bias: Vec3::new(v[2], v[3], v[4]),
                        gyro_bias: Vec3::new(v[5], v[6], v[7]),
                        bias_random_walk_std: v[8],
                    });
                }
                "IMU" => {
                    expect_len(&rest, 7).map_err(err)?;
                    let v = floats(&rest)?;
                    imu.push(ImuSample {
                        timestamp: v[0],
                        accel: Vec3::new(v[1], v[2], v[3]),
                        gyro: Vec3::new(v[4], v[5], v[6]),
                    });
                }
                "ROUND" => {
                    expect_len(&rest, 1).map_err(err)?;
                    rounds.push(RoundLog {
                        round_id: parse(Some(rest[0]), "round id")?,
                        anchor: SlowPoseState {
                            timestamp: 0.0,
                            position: Vec3::ZERO,
                            orientation: Quaternion::IDENTITY,
                            velocity: Vec3::ZERO,
                            bias_acc: Vec3::ZERO,
                            bias_gyro: Vec3::ZERO,
                            round_id: 0,
                        },
                        fast_poses: Vec::new(),
                        send_ts: 0.0,
                        n_samples: 0,
                        received: None,
                        spoof: None,
                        features: None,
                        verdict: None,
                        decision: Decision::Drop,
                    });
                }
                "ANCHOR" => cur.ok_or_else(need_round)?.anchor = parse_slow(&rest).map_err(err)?,
                "FAST" => {
                    expect_len(&rest, 11).map_err(err)?;
                    let v = floats(&rest)?;
                    cur.ok_or_else(need_round)?.fast_poses.push(FastPose {
                        timestamp: v[0],
                        position: Vec3::new(v[1], v[2], v[3]),
                        orientation: Quaternion::new(v[4], v[5], v[6], v[7]),
                        velocity: Vec3::new(v[8], v[9], v[10]),
                    });
                }
                "SENT" => {
                    expect_len(&rest, 2).map_err(err)?;
                    let r = cur.ok_or_else(need_round)?;
                    r.send_ts = parse(Some(rest[0]), "send ts")?;
                    r.n_samples = parse(Some(rest[1]), "sample count")?;
                }
                "RECV" => cur.ok_or_else(need_round)?.received = Some(parse_slow(&rest).map_err(err)?),
                "LOST" => cur.ok_or_else(need_round)?.received = None,
                "SPOOF" => {
                    expect_len(&rest, 16).map_err(err)?;
                    let v = floats(&rest[1..])?;
                    let r = cur.ok_or_else(need_round)?;
                    r.spoof = Some(SpoofRecord {
                        round_id: r.round_id,
                        was_spoofed: parse::<u8>(Some(rest[0]), "spoof flag")? == 1,
                        applied_delta: SpoofDelta {
                            position: Vec3::new(v[0], v[1], v[2]),
                            angle: Vec3::new(v[3], v[4], v[5]),
                            velocity: Vec3::new(v[6], v[7], v[8]),
                            bias_acc: Vec3::new(v[9], v[10], v[11]),
                            bias_gyro: Vec3::new(v[12], v[13], v[14]),
                        },
                    });
                }
                "FEAT" => {
                    expect_len(&rest, FEATURE_DIM).map_err(err)?;
                    cur.ok_or_else(need_round)?.features = Some(FeatureVector::from_slice(&floats(&rest)?)?);
                }
                "VERDICT" => {
                    expect_len(&rest, 4).map_err(err)?;
                    cur.ok_or_else(need_round)?.verdict = Some(Verdict {
                        class: rest[0].parse()?,
                        decision: rest[1].parse()?,
                        mse: parse(Some(rest[2]), "mse")?,
                        hard_streak_after: parse(Some(rest[3]), "streak")?,
                    });
                }
                "DECISION" => {
                    expect_len(&rest, 1).map_err(err)?;
                    cur.ok_or_else(need_round)?.decision = rest[0].parse()?;
                }
                "END" => {
                    expect_len(&rest, 1).map_err(err)?;
                    ended = Some(parse::<usize>(Some(rest[0]), "round count")?);
                }
                "" => {}
                other => return Err(err(format!("unknown record {other:?}"))),
            }
        }

        match ended {
            Some(n) if n == rounds.len() => {}
            Some(n) => {
                return Err(Error::format("session log", format!("END says {n} rounds, found {}", rounds.len())))
            }
            None => return Err(Error::format("session log", "missing END record (truncated?)")),
        }
        let (session_seed, defense) = session.ok_or_else(|| Error::format("session log", "missing SESSION"))?;
        Ok(Self {
            session_seed,
            defense,
            profile: profile.ok_or_else(|| Error::format("session log", "missing PROFILE"))?,
            noise: noise.ok_or_else(|| Error::format("session log", "missing NOISE"))?,
            imu,
            rounds,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Re-runs feature extraction and classification on a logged session.
///
/// The baseline for bias deltas follows the logged decisions, so for a log
/// recorded with the same thresholds the verdicts come out bit-identical.
pub fn replay_verdicts(
    log: &SessionLog,
    thresholds: &Thresholds,
    score: impl Fn(&FeatureVector) -> Result<f64>,
) -> Result<Vec<Option<Verdict>>> {
    let mut state = PolicyState::default();
    let mut prev_accepted = match log.rounds.first() {
        Some(r) => r.anchor,
        None => return Ok(Vec::new()),
    };
    let mut out = Vec::with_capacity(log.rounds.len());
    for r in &log.rounds {
        let Some(incoming) = r.received else {
            out.push(None);
            continue;
        };
        let window = log.window(r);
        let mse = match features::extract(&window, &incoming, &prev_accepted) {
            Ok(f) => score(&f)?,
            Err(Error::DegenerateWindow { .. }) => f64::INFINITY,
            Err(e) => return Err(e.in_round(r.round_id)),
        };
        let (v, next) = classify(mse, thresholds, state);
        state = next;
        out.push(Some(v));
        if r.decision.adopts_pose() {
            prev_accepted = incoming;
        }
    }
    Ok(out)
}

fn line(o: &mut String, args: std::fmt::Arguments) {
    o.write_fmt(args).expect("string write");
    o.push('\n');
}

struct V3(Vec3);
impl std::fmt::Display for V3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{}", self.0.x, self.0.y, self.0.z)
    }
}
fn v3(v: Vec3) -> V3 {
    V3(v)
}

struct Q(Quaternion);
impl std::fmt::Display for Q {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.0.w, self.0.x, self.0.y, self.0.z)
    }
}
fn quat(q: Quaternion) -> Q {
    Q(q)
}

fn slow(s: &SlowPoseState) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        s.round_id,
        s.timestamp,
        v3(s.position),
        quat(s.orientation),
        v3(s.velocity),
        v3(s.bias_acc),
        v3(s.bias_gyro)
    )
}

fn parse_slow(f: &[&str]) -> std::result::Result<SlowPoseState, String> {
    expect_len(f, 18)?;
    let round_id = f[0].parse().map_err(|_| format!("bad round id {:?}", f[0]))?;
    let v = floats(&f[1..]).map_err(|e| e.to_string())?;
    Ok(SlowPoseState {
        timestamp: v[0],
        position: Vec3::new(v[1], v[2], v[3]),
        orientation: Quaternion::new(v[4], v[5], v[6], v[7]),
        velocity: Vec3::new(v[8], v[9], v[10]),
        bias_acc: Vec3::new(v[11], v[12], v[13]),
        bias_gyro: Vec3::new(v[14], v[15], v[16]),
        round_id,
    })
}

fn expect_len(f: &[&str], n: usize) -> std::result::Result<(), String> {
    if f.len() != n {
        return Err(format!("expected {n} fields, got {}", f.len()));
    }
    Ok(())
}

fn parse<T: FromStr>(s: Option<&str>, what: &'static str) -> Result<T> {
    let s = s.ok_or_else(|| Error::format("session log", format!("missing {what}")))?;
    s.parse().map_err(|_| Error::format("session log", format!("bad {what} {s:?}")))
}

fn floats(f: &[&str]) -> Result<Vec<f64>> {
    f.iter().map(|s| parse(Some(s), "number")).collect()
}
