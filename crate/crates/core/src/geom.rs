//! Quaternion and rigid-motion primitives.
//!
//! Quaternions are stored as `(w, x, y, z)` and multiplied with the Hamilton
//! convention. A quaternion describes the body-to-world rotation, so
//! `q.rotate(v_body)` yields the vector expressed in the world frame.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Tolerance used when asserting unit norm.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit vector in the same direction; `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self.scale(1.0 / n))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Raw constructor; does not normalize.
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis`. A zero axis yields identity.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        match axis.normalized() {
            Some(u) => {
                let (s, c) = (0.5 * angle).sin_cos();
                Quaternion::new(c, u.x * s, u.y * s, u.z * s)
            }
            None => Self::IDENTITY,
        }
    }

    /// Exponential map of a rotation vector (axis scaled by angle).
    pub fn from_rotation_vector(rv: Vec3) -> Self {
        let angle = rv.norm();
        if angle < 1e-12 {
            // second-order expansion keeps tiny rotations accurate
            let h = rv.scale(0.5);
            return Quaternion::new(1.0 - 0.125 * angle * angle, h.x, h.y, h.z).normalized();
        }
        Self::from_axis_angle(rv, angle)
    }

    /// Rotation vector (axis scaled by angle in `[0, π]`).
    pub fn to_rotation_vector(self) -> Vec3 {
        let q = if self.w < 0.0 { -self } else { self };
        let v = Vec3::new(q.x, q.y, q.z);
        let s = v.norm();
        if s < 1e-12 {
            return v.scale(2.0);
        }
        let angle = 2.0 * s.atan2(q.w);
        v.scale(angle / s)
    }

    /// Intrinsic Z-Y-X (yaw, pitch, roll) Euler angles: `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> Self {
        let (sr, cr) = (0.5 * roll).sin_cos();
        let (sp, cp) = (0.5 * pitch).sin_cos();
        let (sy, cy) = (0.5 * yaw).sin_cos();
        Quaternion::new(
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        )
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn dot(self, o: Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOL
    }

    pub fn normalized(self) -> Quaternion {
        let n = self.norm();
        Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Quaternion {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Inverse of a unit quaternion.
    pub fn inverse(self) -> Quaternion {
        self.conjugate()
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + 2w(u x v) + 2 u x (u x v)
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v).scale(2.0);
        v + t.scale(self.w) + u.cross(t)
    }

    /// Rotates a world-frame vector into the body frame.
    pub fn inverse_rotate(self, v: Vec3) -> Vec3 {
        self.conjugate().rotate(v)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, o: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Full server-side VIO state for one offload round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowPoseState {
    pub timestamp: f64,
    pub position: Vec3,
    pub orientation: Quaternion,
    pub velocity: Vec3,
    pub bias_acc: Vec3,
    pub bias_gyro: Vec3,
    pub round_id: u64,
}

impl SlowPoseState {
    pub fn is_finite(&self) -> bool {
        self.timestamp.is_finite()
            && self.position.is_finite()
            && self.orientation.is_finite()
            && self.velocity.is_finite()
            && self.bias_acc.is_finite()
            && self.bias_gyro.is_finite()
    }

    pub fn fast_pose(&self) -> FastPose {
        FastPose {
            timestamp: self.timestamp,
            position: self.position,
            orientation: self.orientation,
            velocity: self.velocity,
        }
    }
}

/// High-rate client pose dead-reckoned from the current anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastPose {
    pub timestamp: f64,
    pub position: Vec3,
    pub orientation: Quaternion,
    pub velocity: Vec3,
}

/// Geodesic angle between two rotations, `2 acos(|<a, b>|)`, in `[0, π]`.
///
/// Evaluated as `2 atan2(|vec(a⁻¹ b)|, |w(a⁻¹ b)|)`, which is the same
/// quantity for unit inputs but keeps full precision near zero.
pub fn geodesic_angle(a: Quaternion, b: Quaternion) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("geodesic_angle input"));
    }
    let d = a.conjugate() * b;
    let s = Vec3::new(d.x, d.y, d.z).norm();
    Ok((2.0 * s.atan2(d.w.abs())).clamp(0.0, std::f64::consts::PI))
}

/// Rotates `q` by the body-frame rotation `omega * dt` using the exact
/// exponential map, then renormalizes.
pub fn quat_integrate(q: Quaternion, omega: Vec3, dt: f64) -> Result<Quaternion> {
    if !q.is_finite() || !omega.is_finite() || !dt.is_finite() {
        return Err(Error::NonFinite("quat_integrate input"));
    }
    if dt < 0.0 {
        return Err(Error::InvalidArgument(format!("negative dt {dt}")));
    }
    Ok((q * Quaternion::from_rotation_vector(omega.scale(dt))).normalized())
}

/// Relative motion from `a` to `b`: world-frame translation and body-frame
/// rotation `a⁻¹ ⊗ b`.
pub fn pose_delta(a: &FastPose, b: &FastPose) -> (Vec3, Quaternion) {
    (b.position - a.position, a.orientation.inverse() * b.orientation)
}

/// Applies a delta from [`pose_delta`] to `a`, returning the resulting position and orientation.
pub fn apply_delta(a: &FastPose, delta: (Vec3, Quaternion)) -> (Vec3, Quaternion) {
    (a.position + delta.0, (a.orientation * delta.1).normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn yaw(angle: f64) -> Quaternion {
        Quaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), angle)
    }

    fn pose(p: Vec3, q: Quaternion) -> FastPose {
        FastPose { timestamp: 0.0, position: p, orientation: q, velocity: Vec3::ZERO }
    }

    #[test]
    fn geodesic_examples() {
        let id = Quaternion::IDENTITY;
        assert_eq!(geodesic_angle(id, id).unwrap(), 0.0);
        let q = Quaternion::new(0.5, 0.5, -0.5, 0.5);
        assert_eq!(geodesic_angle(q, -q).unwrap(), 0.0);
        // 90° about z: cos(45°) = w
        let g = geodesic_angle(id, yaw(FRAC_PI_2)).unwrap();
        assert!((g - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn geodesic_rejects_nan() {
        let bad = Quaternion::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(geodesic_angle(bad, Quaternion::IDENTITY).is_err());
    }

    #[test]
    fn integrate_half_turn() {
        let q = quat_integrate(Quaternion::IDENTITY, Vec3::new(0.0, 0.0, PI), 1.0).unwrap();
        assert!(geodesic_angle(q, yaw(PI)).unwrap() < 1e-7);
        assert!(q.z.abs() > 1.0 - 1e-12);
    }

    #[test]
    fn integrate_zero_rate_is_noop() {
        let q = Quaternion::from_euler_zyx(0.1, -0.2, 0.3);
        let r = quat_integrate(q, Vec3::ZERO, 0.01).unwrap();
        assert!(geodesic_angle(q, r).unwrap() < 1e-7);
        assert!((r.w - q.w).abs() < 1e-15);
    }

    #[test]
    fn integrate_rejects_negative_dt() {
        assert!(quat_integrate(Quaternion::IDENTITY, Vec3::ZERO, -1.0).is_err());
    }

    #[test]
    fn integrate_two_half_steps() {
        let q = Quaternion::from_euler_zyx(0.3, 0.2, -1.0);
        let w = Vec3::new(0.4, -1.3, 2.2);
        let one = quat_integrate(q, w, 0.02).unwrap();
        let two = quat_integrate(quat_integrate(q, w, 0.01).unwrap(), w, 0.01).unwrap();
        for (a, b) in one.to_array().iter().zip(two.to_array()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn pose_delta_examples() {
        let p = pose(Vec3::new(1.0, 2.0, 3.0), Quaternion::from_euler_zyx(0.1, 0.2, 0.3));
        let (t, r) = pose_delta(&p, &p);
        assert_eq!(t, Vec3::ZERO);
        assert!(geodesic_angle(r, Quaternion::IDENTITY).unwrap() < 1e-7);

        let a = pose(Vec3::ZERO, Quaternion::IDENTITY);
        let b = pose(Vec3::new(1.0, 0.0, 0.0), Quaternion::IDENTITY);
        assert_eq!(pose_delta(&a, &b).0, Vec3::new(1.0, 0.0, 0.0));

        // hand-composed: yaw(30°)⁻¹ ⊗ yaw(120°) = yaw(90°)
        let a = pose(Vec3::ZERO, yaw(PI / 6.0));
        let b = pose(Vec3::ZERO, yaw(2.0 * PI / 3.0));
        let (t, r) = pose_delta(&a, &b);
        assert_eq!(t, Vec3::ZERO);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r.w - s).abs() < 1e-12 && (r.z - s).abs() < 1e-12);
    }

    #[test]
    fn euler_matches_axis_composition() {
        let (r, p, y) = (0.3, -0.4, 1.1);
        let composed = Quaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), y)
            * Quaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), p)
            * Quaternion::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), r);
        let direct = Quaternion::from_euler_zyx(r, p, y);
        assert!(geodesic_angle(composed, direct).unwrap() < 1e-7);
    }

    #[test]
    fn rotation_vector_roundtrip() {
        let rv = Vec3::new(0.3, -0.7, 1.9);
        let back = Quaternion::from_rotation_vector(rv).to_rotation_vector();
        assert!((back - rv).norm() < 1e-12);
    }
}
