//! Trajectory error metrics against a reference run in the same world frame.
//!
//! No rigid alignment is applied before ATE: the estimate and the reference
//! are produced from the same ground truth and share a world frame, so any
//! global offset is part of the error being measured.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geom::{geodesic_angle, pose_delta, FastPose};

/// Largest timestamp gap accepted when pairing samples, s.
pub const MAX_PAIR_GAP: f64 = 0.002;
/// Smoothing windows (frames) for the short- and long-horizon series.
pub const SMOOTHING_WINDOWS: [usize; 2] = [500, 2000];

const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    /// `(estimate, reference)`
    pub pairs: Vec<(FastPose, FastPose)>,
    /// Estimate samples with no reference within the gap limit.
    pub dropped: usize,
    pub max_gap: f64,
}

fn check_sorted(poses: &[FastPose]) -> Result<()> {
    for (i, w) in poses.windows(2).enumerate() {
        if !(w[1].timestamp > w[0].timestamp) {
            return Err(Error::UnsortedTimestamps { index: i + 1 });
        }
    }
    Ok(())
}

/// Nearest-timestamp pairing; an exact tie goes to the later reference sample.
pub fn align_pairs(est: &[FastPose], reference: &[FastPose], max_gap: f64) -> Result<Pairing> {
    if est.is_empty() || reference.is_empty() {
        return Err(Error::NoOverlap);
    }
    check_sorted(est)?;
    check_sorted(reference)?;
    let mut pairs = Vec::with_capacity(est.len());
    let (mut dropped, mut worst) = (0, 0.0f64);
    let mut j = 0;
    for e in est {
        while j + 1 < reference.len() && reference[j + 1].timestamp <= e.timestamp {
            j += 1;
        }
        let mut best = j;
        if j + 1 < reference.len() {
            let d0 = (reference[j].timestamp - e.timestamp).abs();
            let d1 = (reference[j + 1].timestamp - e.timestamp).abs();
            if d1 <= d0 + TIE_EPS {
                best = j + 1;
            }
        }
        let gap = (reference[best].timestamp - e.timestamp).abs();
        if gap <= max_gap {
            pairs.push((*e, reference[best]));
            worst = worst.max(gap);
        } else {
            dropped += 1;
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(Pairing { pairs, dropped, max_gap: worst })
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v * v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Per-pair absolute errors `(translation m, rotation rad)`.
pub fn absolute_errors(pairs: &[(FastPose, FastPose)]) -> Result<Vec<(f64, f64)>> {
    pairs
        .iter()
        .map(|(e, r)| Ok(((e.position - r.position).norm(), geodesic_angle(r.orientation, e.orientation)?)))
        .collect()
}

/// Per-step relative errors `(translation m, rotation rad)`.
pub fn relative_errors(pairs: &[(FastPose, FastPose)]) -> Result<Vec<(f64, f64)>> {
    pairs
        .windows(2)
        .map(|w| {
            let (de, qe) = pose_delta(&w[0].0, &w[1].0);
            let (dr, qr) = pose_delta(&w[0].1, &w[1].1);
            Ok(((de - dr).norm(), geodesic_angle(qr, qe)?))
        })
        .collect()
}

/// `(t_ate cm, r_ate deg)`.
pub fn compute_ate(pairs: &[(FastPose, FastPose)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("ATE pairs"));
    }
    let e = absolute_errors(pairs)?;
    Ok((rms(e.iter().map(|x| x.0)) * 100.0, rms(e.iter().map(|x| x.1)).to_degrees()))
}

/// `(t_rpe cm, r_rpe deg)`.
pub fn compute_rpe(pairs: &[(FastPose, FastPose)]) -> Result<(f64, f64)> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(format!("RPE needs at least 2 pairs, got {}", pairs.len())));
    }
    let e = relative_errors(pairs)?;
    Ok((rms(e.iter().map(|x| x.0)) * 100.0, rms(e.iter().map(|x| x.1)).to_degrees()))
}

/// Centered moving average. Odd windows span `[i − (w−1)/2, i + (w−1)/2]`,
/// even ones `[i − w/2, i + w/2 − 1]`; both are cut to the available samples.
pub fn smooth_series(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::InvalidArgument("smoothing window must be >= 1".into()));
    }
    let n = series.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in series {
        prefix.push(prefix.last().expect("non-empty") + v);
    }
    let back = window / 2;
    let fwd = window - 1 - back;
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + fwd).min(n - 1);
            if window == 1 {
                series[i]
            } else {
                (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameError {
    pub timestamp: f64,
    pub ate_cm: f64,
    pub ate_deg: f64,
    /// Error of the step ending at this frame; 0 for the first frame.
    pub rpe_cm: f64,
    pub rpe_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub t_ate_cm: f64,
    pub r_ate_deg: f64,
    pub t_rpe_cm: f64,
    pub r_rpe_deg: f64,
    pub pairs: usize,
    pub dropped: usize,
    pub frames: Vec<FrameError>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "t_ate_cm,r_ate_deg,t_rpe_cm,r_rpe_deg,pairs,dropped";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.t_ate_cm, self.r_ate_deg, self.t_rpe_cm, self.r_rpe_deg, self.pairs, self.dropped
        )
    }

    /// Per-frame errors plus their smoothed versions for each window in
    /// [`SMOOTHING_WINDOWS`].
    pub fn series_csv(&self) -> Result<String> {
        let cols: [fn(&FrameError) -> f64; 4] = [|f| f.ate_cm, |f| f.ate_deg, |f| f.rpe_cm, |f| f.rpe_deg];
        let names = ["ate_cm", "ate_deg", "rpe_cm", "rpe_deg"];
        let mut smoothed = Vec::new();
        let mut header = String::from("timestamp,ate_cm,ate_deg,rpe_cm,rpe_deg");
        for w in SMOOTHING_WINDOWS {
            for (col, name) in cols.iter().zip(names) {
                let raw: Vec<f64> = self.frames.iter().map(col).collect();
                smoothed.push(smooth_series(&raw, w)?);
                write!(header, ",{name}_w{w}").expect("string write");
            }
        }
        let mut out = header + "\n";
        for (i, f) in self.frames.iter().enumerate() {
            write!(out, "{},{},{},{},{}", f.timestamp, f.ate_cm, f.ate_deg, f.rpe_cm, f.rpe_deg).expect("string write");
            for s in &smoothed {
                write!(out, ",{}", s[i]).expect("string write");
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Pairs `est` against `reference` and computes every metric.
pub fn evaluate(est: &[FastPose], reference: &[FastPose]) -> Result<MetricReport> {
    let pairing = align_pairs(est, reference, MAX_PAIR_GAP)?;
    let (t_ate_cm, r_ate_deg) = compute_ate(&pairing.pairs)?;
    let (t_rpe_cm, r_rpe_deg) = compute_rpe(&pairing.pairs)?;
    let abs = absolute_errors(&pairing.pairs)?;
    let rel = relative_errors(&pairing.pairs)?;
    let frames = pairing
        .pairs
        .iter()
        .enumerate()
        .map(|(i, (e, _))| {
            let (rc, rd) = if i == 0 { (0.0, 0.0) } else { rel[i - 1] };
            FrameError {
                timestamp: e.timestamp,
                ate_cm: abs[i].0 * 100.0,
                ate_deg: abs[i].1.to_degrees(),
                rpe_cm: rc * 100.0,
                rpe_deg: rd.to_degrees(),
            }
        })
        .collect();
    Ok(MetricReport {
        t_ate_cm,
        r_ate_deg,
        t_rpe_cm,
        r_rpe_deg,
        pairs: pairing.pairs.len(),
        dropped: pairing.dropped,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Quaternion, Vec3};

    fn traj(n: usize, dt: f64, t0: f64) -> Vec<FastPose> {
        (0..n)
            .map(|i| {
                let t = t0 + i as f64 * dt;
                FastPose {
                    timestamp: t,
                    position: Vec3::new(t.sin(), t.cos(), 0.1 * t),
                    orientation: Quaternion::from_euler_zyx(0.1 * t, 0.2 * t.sin(), t),
                    velocity: Vec3::ZERO,
                }
            })
            .collect()
    }

    fn assert_near(got: (f64, f64), want: (f64, f64)) {
        assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12, "{got:?} != {want:?}");
    }

    fn shifted(p: &[FastPose], d: Vec3) -> Vec<FastPose> {
        p.iter().map(|f| FastPose { position: f.position + d, ..*f }).collect()
    }

    #[test]
    fn identical_logs_pair_fully() {
        let a = traj(100, 0.002, 0.0);
        let p = align_pairs(&a, &a, MAX_PAIR_GAP).unwrap();
        assert_eq!((p.pairs.len(), p.dropped, p.max_gap), (100, 0, 0.0));
        assert_near(compute_ate(&p.pairs).unwrap(), (0.0, 0.0));
        assert_near(compute_rpe(&p.pairs).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn half_period_offset_pairs_everything() {
        let a = traj(100, 0.002, 0.0);
        let b = traj(101, 0.002, -0.001);
        let p = align_pairs(&a, &b, MAX_PAIR_GAP).unwrap();
        assert_eq!((p.pairs.len(), p.dropped), (100, 0));
        assert!((p.max_gap - 0.001).abs() < 1e-12);
        // ties go to the later sample
        assert!(p.pairs[0].1.timestamp > p.pairs[0].0.timestamp);
    }

    #[test]
    fn disjoint_ranges_error() {
        let a = traj(10, 0.002, 0.0);
        let b = traj(10, 0.002, 5.0);
        assert!(matches!(align_pairs(&a, &b, MAX_PAIR_GAP), Err(Error::NoOverlap)));
    }

    #[test]
    fn constant_offset() {
        let a = traj(50, 0.002, 0.0);
        let b = shifted(&a, Vec3::new(0.0, 0.01, 0.0));
        let p = align_pairs(&b, &a, MAX_PAIR_GAP).unwrap();
        let (t, r) = compute_ate(&p.pairs).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        assert!(r.abs() < 1e-12);
        assert_near(compute_rpe(&p.pairs).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn two_pose_hand_rmse() {
        let a = traj(2, 0.002, 0.0);
        let mut b = a.clone();
        b[0].position += Vec3::new(0.03, 0.0, 0.0);
        b[1].position += Vec3::new(0.0, 0.0, 0.04);
        let p = align_pairs(&b, &a, MAX_PAIR_GAP).unwrap();
        assert!((compute_ate(&p.pairs).unwrap().0 - 12.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_jump_rpe_closed_form() {
        let n = 101;
        let d = 0.05;
        let a = traj(n, 0.002, 0.0);
        let mut b = a.clone();
        b[40].position += Vec3::new(d, 0.0, 0.0);
        let p = align_pairs(&b, &a, MAX_PAIR_GAP).unwrap();
        let (t, _) = compute_rpe(&p.pairs).unwrap();
        let want = d * (2.0 / (n as f64 - 1.0)).sqrt() * 100.0;
        assert!((t - want).abs() < 1e-12, "{t} vs {want}");
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(smooth_series(&[3.0; 7], 4).unwrap(), vec![3.0; 7]);
        let x = [1.0, 5.0, 2.0];
        assert_eq!(smooth_series(&x, 1).unwrap(), x.to_vec());
        let mut imp = vec![0.0; 21];
        imp[10] = 6.0;
        let s = smooth_series(&imp, 3).unwrap();
        assert_eq!(&s[9..12], &[2.0, 2.0, 2.0]);
        assert_eq!(s[8], 0.0);
        // truncated at the edges
        assert_eq!(smooth_series(&[3.0, 0.0, 0.0], 3).unwrap()[0], 1.5);
        assert!(smooth_series(&x, 0).is_err());
    }

    #[test]
    fn rpe_needs_two_pairs() {
        let a = traj(1, 0.002, 0.0);
        let p = align_pairs(&a, &a, MAX_PAIR_GAP).unwrap();
        assert!(compute_rpe(&p.pairs).is_err());
    }

    #[test]
    fn report_series_has_smoothed_columns() {
        let a = traj(30, 0.002, 0.0);
        let r = evaluate(&shifted(&a, Vec3::new(0.01, 0.0, 0.0)), &a).unwrap();
        let csv = r.series_csv().unwrap();
        assert_eq!(csv.lines().count(), 31);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 13);
    }
}
