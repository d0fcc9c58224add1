//! Length-prefixed binary framing between device and server.
//!
//! ```text
//! frame   = magic "PDS1" | version u8 | kind u8 | payload_len u32 | payload
//! kind 1  SensorBatch   round_id u64 | send_ts f64 | n u32 | n × (t, ax, ay, az, gx, gy, gz) f64
//! kind 2  SlowPose      round_id u64 | t f64 | p[3] | q[4] (w,x,y,z) | v[3] | b_a[3] | b_g[3]   (f64)
//! kind 3  SessionStart  session_seed u64 | duration f64 | imu_rate f64 | slow_pose_rate f64
//!                       | profile_seed u64 | 6 × (count u32 | count × (amplitude, frequency, phase) f64)
//!                       | accel_noise_std | gyro_noise_std | accel_bias[3] | gyro_bias[3] | bias_rw_std (f64)
//! kind 4  SessionEnd    zero or more 129-byte spoof records:
//!                       round_id u64 | spoofed u8 | Δp[3] | Δθ[3] | Δv[3] | Δb_a[3] | Δb_g[3] (f64)
//! ```
//!
//! Everything is little-endian. The six sine groups are position x, y, z then
//! roll, pitch, yaw rate.

use thiserror::Error;

use crate::attack::{SpoofDelta, SpoofRecord};
use crate::geom::{Quaternion, SlowPoseState, Vec3};
use crate::motion::{ImuNoiseModel, ImuSample, SineTerm, TrajectoryProfile};

pub const MAGIC: [u8; 4] = *b"PDS1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
pub const MAX_PAYLOAD: usize = 1 << 24;

const SLOW_POSE_LEN: usize = 8 + 17 * 8;
const SPOOF_RECORD_LEN: usize = 8 + 1 + 15 * 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("protocol version {got}, expected {VERSION}")]
    VersionMismatch { got: u8 },
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("payload length {len} exceeds {max}")]
    LengthOverflow { len: u64, max: usize },
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("malformed {kind} payload: {detail}")]
    Malformed { kind: &'static str, detail: String },
    #[error("connection closed")]
    Closed,
    #[error("timed out waiting for round {round_id}")]
    Timeout { round_id: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    SensorBatch = 1,
    SlowPose = 2,
    SessionStart = 3,
    SessionEnd = 4,
}

impl TryFrom<u8> for Kind {
    type Error = WireError;
    fn try_from(v: u8) -> Result<Self, WireError> {
        match v {
            1 => Ok(Kind::SensorBatch),
            2 => Ok(Kind::SlowPose),
            3 => Ok(Kind::SessionStart),
            4 => Ok(Kind::SessionEnd),
            other => Err(WireError::UnknownKind(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorBatch {
    pub round_id: u64,
    pub send_ts: f64,
    pub samples: Vec<ImuSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionStart {
    pub session_seed: u64,
    pub profile: TrajectoryProfile,
    pub noise: ImuNoiseModel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    SensorBatch(SensorBatch),
    SlowPose(SlowPoseState),
    SessionStart(SessionStart),
    /// Sent empty by the device; the server's reply carries its spoof log.
    SessionEnd(Vec<SpoofRecord>),
}

impl Message {
    pub fn kind(&self) -> Kind {
        match self {
            Message::SensorBatch(_) => Kind::SensorBatch,
            Message::SlowPose(_) => Kind::SlowPose,
            Message::SessionStart(_) => Kind::SessionStart,
            Message::SessionEnd(_) => Kind::SessionEnd,
        }
    }
}

#[derive(Default)]
struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn vec3(&mut self, v: Vec3) {
        v.to_array().into_iter().for_each(|x| self.f64(x));
    }
}

struct In<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(WireError::Malformed {
                kind: self.kind,
                detail: format!("payload ends at byte {}, field needs {n} more", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn vec3(&mut self) -> Result<Vec3, WireError> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn done(&self) -> Result<(), WireError> {
        if self.pos != self.buf.len() {
            return Err(WireError::Malformed {
                kind: self.kind,
                detail: format!("{} unexpected trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

fn put_slow_pose(o: &mut Out, s: &SlowPoseState) {
    o.u64(s.round_id);
    o.f64(s.timestamp);
    o.vec3(s.position);
    s.orientation.to_array().into_iter().for_each(|x| o.f64(x));
    o.vec3(s.velocity);
    o.vec3(s.bias_acc);
    o.vec3(s.bias_gyro);
}

fn put_payload(o: &mut Out, msg: &Message) {
    match msg {
        Message::SensorBatch(b) => {
            o.u64(b.round_id);
            o.f64(b.send_ts);
            o.u32(b.samples.len() as u32);
            for s in &b.samples {
                o.f64(s.timestamp);
                o.vec3(s.accel);
                o.vec3(s.gyro);
            }
        }
        Message::SlowPose(s) => put_slow_pose(o, s),
        Message::SessionStart(st) => {
            let p = &st.profile;
            o.u64(st.session_seed);
            o.f64(p.duration);
            o.f64(p.imu_rate);
            o.f64(p.slow_pose_rate);
            o.u64(p.rng_seed);
            for terms in p.position.iter().chain(&p.euler_rate) {
                o.u32(terms.len() as u32);
                for t in terms {
                    o.f64(t.amplitude);
                    o.f64(t.frequency);
                    o.f64(t.phase);
                }
            }
            let n = &st.noise;
            o.f64(n.accel_noise_std);
            o.f64(n.gyro_noise_std);
            o.vec3(n.accel_bias);
            o.vec3(n.gyro_bias);
            o.f64(n.bias_random_walk_std);
        }
        Message::SessionEnd(records) => {
            for r in records {
                o.u64(r.round_id);
                o.u8(r.was_spoofed as u8);
                let d = &r.applied_delta;
                for v in [d.position, d.angle, d.velocity, d.bias_acc, d.bias_gyro] {
                    o.vec3(v);
                }
            }
        }
    }
}

/// Serialises one message into a complete frame.
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut payload = Out::default();
    put_payload(&mut payload, msg);
    let mut o = Out(Vec::with_capacity(HEADER_LEN + payload.0.len()));
    o.0.extend_from_slice(&MAGIC);
    o.u8(VERSION);
    o.u8(msg.kind() as u8);
    o.u32(payload.0.len() as u32);
    o.0.extend_from_slice(&payload.0);
    o.0
}

fn get_slow_pose(i: &mut In) -> Result<SlowPoseState, WireError> {
    let round_id = i.u64()?;
    let timestamp = i.f64()?;
    let position = i.vec3()?;
    let orientation = Quaternion::new(i.f64()?, i.f64()?, i.f64()?, i.f64()?);
    Ok(SlowPoseState {
        timestamp,
        position,
        orientation,
        velocity: i.vec3()?,
        bias_acc: i.vec3()?,
        bias_gyro: i.vec3()?,
        round_id,
    })
}

fn decode_payload(kind: Kind, payload: &[u8]) -> Result<Message, WireError> {
    let name = match kind {
        Kind::SensorBatch => "SensorBatch",
        Kind::SlowPose => "SlowPose",
        Kind::SessionStart => "SessionStart",
        Kind::SessionEnd => "SessionEnd",
    };
    let mut i = In { buf: payload, pos: 0, kind: name };
    let msg = match kind {
        Kind::SensorBatch => {
            let round_id = i.u64()?;
            let send_ts = i.f64()?;
            let n = i.u32()? as usize;
            if n.saturating_mul(56) != payload.len() - i.pos {
                return Err(WireError::Malformed {
                    kind: name,
                    detail: format!("{n} samples do not fit {} payload bytes", payload.len()),
                });
            }
            let mut samples = Vec::with_capacity(n);
            for _ in 0..n {
                samples.push(ImuSample { timestamp: i.f64()?, accel: i.vec3()?, gyro: i.vec3()? });
            }
            Message::SensorBatch(SensorBatch { round_id, send_ts, samples })
        }
        Kind::SlowPose => {
            if payload.len() != SLOW_POSE_LEN {
                return Err(WireError::Malformed { kind: name, detail: format!("length {}", payload.len()) });
            }
            Message::SlowPose(get_slow_pose(&mut i)?)
        }
        Kind::SessionStart => {
            let session_seed = i.u64()?;
            let duration = i.f64()?;
            let imu_rate = i.f64()?;
            let slow_pose_rate = i.f64()?;
            let rng_seed = i.u64()?;
            let mut groups: Vec<Vec<SineTerm>> = Vec::with_capacity(6);
            for _ in 0..6 {
                let n = i.u32()? as usize;
                if n.saturating_mul(24) > payload.len() - i.pos {
                    return Err(WireError::Malformed { kind: name, detail: format!("term count {n}") });
                }
                let mut terms = Vec::with_capacity(n);
                for _ in 0..n {
                    terms.push(SineTerm { amplitude: i.f64()?, frequency: i.f64()?, phase: i.f64()? });
                }
                groups.push(terms);
            }
            let mut g = groups.into_iter();
            let mut next = || g.next().expect("6 groups");
            let position = [next(), next(), next()];
            let euler_rate = [next(), next(), next()];
            let noise = ImuNoiseModel {
                accel_noise_std: i.f64()?,
                gyro_noise_std: i.f64()?,
                accel_bias: i.vec3()?,
                gyro_bias: i.vec3()?,
                bias_random_walk_std: i.f64()?,
            };
            let profile = TrajectoryProfile { position, euler_rate, duration, imu_rate, slow_pose_rate, rng_seed };
            Message::SessionStart(SessionStart { session_seed, profile, noise })
        }
        Kind::SessionEnd => {
            if !payload.len().is_multiple_of(SPOOF_RECORD_LEN) {
                return Err(WireError::Malformed { kind: name, detail: format!("length {}", payload.len()) });
            }
            let mut records = Vec::with_capacity(payload.len() / SPOOF_RECORD_LEN);
            while i.pos < payload.len() {
                let round_id = i.u64()?;
                let was_spoofed = match i.u8()? {
                    0 => false,
                    1 => true,
                    b => return Err(WireError::Malformed { kind: name, detail: format!("flag byte {b}") }),
                };
                let applied_delta = SpoofDelta {
                    position: i.vec3()?,
                    angle: i.vec3()?,
                    velocity: i.vec3()?,
                    bias_acc: i.vec3()?,
                    bias_gyro: i.vec3()?,
                };
                records.push(SpoofRecord { round_id, was_spoofed, applied_delta });
            }
            Message::SessionEnd(records)
        }
    };
    i.done()?;
    Ok(msg)
}

/// Validates a frame header and returns `(kind, payload_len)`.
fn parse_header(h: &[u8]) -> Result<(Kind, usize), WireError> {
    let magic: [u8; 4] = h[..4].try_into().expect("4");
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if h[4] != VERSION {
        return Err(WireError::VersionMismatch { got: h[4] });
    }
    let kind = Kind::try_from(h[5])?;
    let len = u32::from_le_bytes(h[6..10].try_into().expect("4")) as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::LengthOverflow { len: len as u64, max: MAX_PAYLOAD });
    }
    Ok((kind, len))
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated { needed: HEADER_LEN, available: bytes.len() });
    }
    let (kind, len) = parse_header(&bytes[..HEADER_LEN])?;
    let total = HEADER_LEN + len;
    if bytes.len() < total {
        return Err(WireError::Truncated { needed: total, available: bytes.len() });
    }
    if bytes.len() > total {
        return Err(WireError::Malformed {
            kind: "frame",
            detail: format!("{} bytes past frame end", bytes.len() - total),
        });
    }
    decode_payload(kind, &bytes[HEADER_LEN..])
}

/// Incremental decoder for a byte stream. After an error it discards input up
/// to the next occurrence of the magic, so one damaged frame costs one message.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Drops bytes up to the next magic at or after `from`.
    fn resync(&mut self, from: usize) {
        let start = self.buf[from.min(self.buf.len())..]
            .windows(4)
            .position(|w| w == MAGIC)
            .map(|p| p + from)
            // keep a possible partial magic at the tail
            .unwrap_or_else(|| self.buf.len().saturating_sub(3).max(from.min(self.buf.len())));
        self.buf.drain(..start);
    }

    /// Next complete message, `None` if more bytes are needed.
    pub fn next_message(&mut self) -> Option<Result<Message, WireError>> {
        if self.buf.len() < HEADER_LEN {
            if self.buf.len() >= 4 && self.buf[..4] != MAGIC {
                let magic = self.buf[..4].try_into().expect("4");
                self.resync(1);
                return Some(Err(WireError::BadMagic(magic)));
            }
            return None;
        }
        let (kind, len) = match parse_header(&self.buf[..HEADER_LEN]) {
            Ok(h) => h,
            Err(e) => {
                self.resync(1);
                return Some(Err(e));
            }
        };
        let total = HEADER_LEN + len;
        if self.buf.len() < total {
            return None;
        }
        // A frame that lost bytes swallows the head of its successor; the
        // bytes after its claimed end then do not start with the magic.
        if self.buf.len() >= total + 4 && self.buf[total..total + 4] != MAGIC {
            let available =
                self.buf[HEADER_LEN..].windows(4).position(|w| w == MAGIC).map_or(self.buf.len(), |p| p + HEADER_LEN);
            self.resync(1);
            return Some(Err(WireError::Truncated { needed: total, available }));
        }
        let result = decode_payload(kind, &self.buf[HEADER_LEN..total]);
        self.buf.drain(..total);
        Some(result)
    }

    /// Reports leftover bytes at end of stream as a truncated frame.
    pub fn finish(&mut self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            return Ok(());
        }
        let available = self.buf.len();
        let needed = if available >= HEADER_LEN {
            parse_header(&self.buf[..HEADER_LEN]).map_or(HEADER_LEN, |(_, l)| HEADER_LEN + l)
        } else {
            HEADER_LEN
        };
        self.buf.clear();
        Err(WireError::Truncated { needed, available })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch(n: usize) -> Message {
        Message::SensorBatch(SensorBatch {
            round_id: 7,
            send_ts: 0.35,
            samples: (0..n)
                .map(|i| ImuSample {
                    timestamp: i as f64 * 0.002,
                    accel: Vec3::new(0.1, -0.2, 9.81),
                    gyro: Vec3::new(0.01 * i as f64, 0.0, -0.3),
                })
                .collect(),
        })
    }

    #[test]
    fn empty_session_end_roundtrip() {
        let m = Message::SessionEnd(vec![]);
        let bytes = encode(&m);
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn sensor_batch_roundtrip() {
        let m = batch(25);
        let bytes = encode(&m);
        assert_eq!(bytes.len(), HEADER_LEN + 20 + 25 * 56);
        assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn header_errors() {
        let mut b = encode(&batch(2));
        b[4] = 9;
        assert_eq!(decode(&b), Err(WireError::VersionMismatch { got: 9 }));
        let mut b = encode(&batch(2));
        b[5] = 77;
        assert_eq!(decode(&b), Err(WireError::UnknownKind(77)));
        let mut b = encode(&batch(2));
        b[0] = b'Q';
        assert!(matches!(decode(&b), Err(WireError::BadMagic(_))));
        let mut b = encode(&batch(2));
        b[6..10].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode(&b), Err(WireError::LengthOverflow { .. })));
    }

    #[test]
    fn truncated_frame_is_rejected() {
        let b = encode(&batch(25));
        assert!(matches!(decode(&b[..b.len() - 1]), Err(WireError::Truncated { .. })));
    }

    #[test]
    fn stream_resyncs_after_truncation() {
        let first = encode(&batch(25));
        let second = encode(&Message::SessionEnd(vec![]));
        let third = encode(&batch(3));
        let mut stream = first[..first.len() - 1].to_vec();
        stream.extend(&second);
        stream.extend(&third);
        let mut dec = FrameDecoder::new();
        dec.push(&stream);
        assert!(matches!(dec.next_message(), Some(Err(WireError::Truncated { .. }))));
        assert_eq!(dec.next_message(), Some(Ok(Message::SessionEnd(vec![]))));
        assert_eq!(dec.next_message(), Some(Ok(batch(3))));
        assert_eq!(dec.next_message(), None);
        assert!(dec.finish().is_ok());
    }

    #[test]
    fn stream_skips_garbage_prefix() {
        let mut dec = FrameDecoder::new();
        dec.push(b"xxxxxxxxxxxxxxx");
        dec.push(&encode(&batch(1)));
        let mut got = Vec::new();
        while let Some(m) = dec.next_message() {
            got.push(m);
        }
        assert_eq!(got.last(), Some(&Ok(batch(1))));
        assert!(got[..got.len() - 1].iter().all(|r| r.is_err()));
    }

    #[test]
    fn byte_at_a_time_delivery() {
        let frames = [encode(&batch(4)), encode(&Message::SessionEnd(vec![])), encode(&batch(0))];
        let mut dec = FrameDecoder::new();
        let mut got = Vec::new();
        for b in frames.concat() {
            dec.push(&[b]);
            while let Some(m) = dec.next_message() {
                got.push(m.unwrap());
            }
        }
        assert_eq!(got, vec![batch(4), Message::SessionEnd(vec![]), batch(0)]);
    }

    #[test]
    fn partial_frame_at_eof() {
        let b = encode(&batch(3));
        let mut dec = FrameDecoder::new();
        dec.push(&b[..20]);
        assert_eq!(dec.next_message(), None);
        assert!(matches!(dec.finish(), Err(WireError::Truncated { .. })));
    }

    fn finite() -> impl Strategy<Value = f64> {
        -1e6f64..1e6
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (finite(), finite(), finite()).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn imu() -> impl Strategy<Value = ImuSample> {
        (finite(), vec3(), vec3()).prop_map(|(timestamp, accel, gyro)| ImuSample { timestamp, accel, gyro })
    }

    fn slow_pose() -> impl Strategy<Value = SlowPoseState> {
        (any::<u64>(), finite(), vec3(), (finite(), finite(), finite(), finite()), vec3(), vec3(), vec3()).prop_map(
            |(round_id, timestamp, position, (w, x, y, z), velocity, bias_acc, bias_gyro)| SlowPoseState {
                timestamp,
                position,
                orientation: Quaternion::new(w, x, y, z),
                velocity,
                bias_acc,
                bias_gyro,
                round_id,
            },
        )
    }

    fn terms() -> impl Strategy<Value = Vec<SineTerm>> {
        proptest::collection::vec(
            (finite(), finite(), finite()).prop_map(|(amplitude, frequency, phase)| SineTerm {
                amplitude,
                frequency,
                phase,
            }),
            0..4,
        )
    }

    fn message() -> impl Strategy<Value = Message> {
        prop_oneof![
            (any::<u64>(), finite(), proptest::collection::vec(imu(), 0..40)).prop_map(
                |(round_id, send_ts, samples)| Message::SensorBatch(SensorBatch { round_id, send_ts, samples })
            ),
            slow_pose().prop_map(Message::SlowPose),
            (
                any::<u64>(),
                [terms(), terms(), terms(), terms(), terms(), terms()],
                finite(),
                any::<u64>(),
                vec3(),
                vec3()
            )
                .prop_map(|(session_seed, t, std, rng_seed, accel_bias, gyro_bias)| {
                    let [a, b, c, d, e, f] = t;
                    Message::SessionStart(SessionStart {
                        session_seed,
                        profile: TrajectoryProfile {
                            position: [a, b, c],
                            euler_rate: [d, e, f],
                            duration: std.abs(),
                            imu_rate: 500.0,
                            slow_pose_rate: 20.0,
                            rng_seed,
                        },
                        noise: ImuNoiseModel {
                            accel_noise_std: std,
                            gyro_noise_std: -std,
                            accel_bias,
                            gyro_bias,
                            bias_random_walk_std: 0.5,
                        },
                    })
                }),
            proptest::collection::vec(
                (any::<u64>(), any::<bool>(), [vec3(), vec3(), vec3(), vec3(), vec3()]).prop_map(
                    |(round_id, was_spoofed, [position, angle, velocity, bias_acc, bias_gyro])| SpoofRecord {
                        round_id,
                        was_spoofed,
                        applied_delta: SpoofDelta { position, angle, velocity, bias_acc, bias_gyro },
                    }
                ),
                0..5
            )
            .prop_map(Message::SessionEnd),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn roundtrip(m in message()) {
            let bytes = encode(&m);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(encode(&back), bytes);
            prop_assert_eq!(back, m);
        }

        #[test]
        fn any_strict_prefix_is_truncated(m in message(), cut in 1usize..64) {
            let bytes = encode(&m);
            let keep = bytes.len().saturating_sub(cut);
            prop_assert!(decode(&bytes[..keep]).is_err());
        }
    }
}
