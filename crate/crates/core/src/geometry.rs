//! Frame algebra for robot-centric landmark association.
//!
//! Three frames appear throughout the crate:
//!
//! - **camera** (C): the detector's frame, in which object centers arrive;
//! - **body** (B): the robot's rigid body, reached from C by the mounting
//!   extrinsics `B = R·C + T`;
//! - **magnetic** (M): body-origin but heading-aligned with magnetic north,
//!   reached from B by a planar rotation through the robot yaw.
//!
//! Yaw is expressed in degrees. The body→magnetic rotation is
//!
//! ```text
//! x' = x·cos(ψ) + y·sin(ψ)
//! y' = y·cos(ψ) − x·sin(ψ)
//! z' = z
//! ```
//!
//! so a heading ψ rotates body vectors by −ψ about +z (clockwise-positive
//! heading). The body forward axis therefore points along `(cos ψ, −sin ψ)`
//! in the magnetic frame, and [`heading_of`] inverts exactly that.
//!
//! Because M keeps a fixed orientation, the vector between two static
//! landmarks expressed in M is the same no matter where the robot stood when
//! it measured them. [`propagate_landmark`] uses that to carry a landmark
//! seen at one instant into the body frame of a later instant.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormality / determinant tolerance for extrinsic rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// A 3-vector in meters. The frame is implied by context.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Points and displacement vectors share a representation.
pub type Point3 = Vec3;

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(&self, other: &Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(&self, other: &Vec3) -> f64 {
        (*other - *self).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.x == 0.0 && self.y == 0.0 && self.z == 0.0
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn finite(self, what: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(what))
        }
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl From<Vector3<f64>> for Vec3 {
    fn from(v: Vector3<f64>) -> Self {
        Vec3::new(v.x, v.y, v.z)
    }
}

impl From<Vec3> for Vector3<f64> {
    fn from(v: Vec3) -> Self {
        Vector3::new(v.x, v.y, v.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, rhs: Vec3) {
        *self = *self + rhs;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, rhs: Vec3) {
        *self = *self - rhs;
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
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Robot heading against magnetic north, in degrees, normalized to `[0, 360)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct YawDeg(f64);

impl YawDeg {
    pub fn new(degrees: f64) -> Result<Self> {
        if !degrees.is_finite() {
            return Err(Error::NonFinite("yaw"));
        }
        Ok(Self(normalize_degrees(degrees)))
    }

    pub fn degrees(self) -> f64 {
        self.0
    }

    pub fn radians(self) -> f64 {
        self.0.to_radians()
    }
}

impl TryFrom<f64> for YawDeg {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        YawDeg::new(value)
    }
}

impl From<YawDeg> for f64 {
    fn from(y: YawDeg) -> f64 {
        y.0
    }
}

/// Wraps any finite angle into `[0, 360)`.
pub fn normalize_degrees(degrees: f64) -> f64 {
    let wrapped = degrees.rem_euclid(360.0);
    // rem_euclid rounds tiny negatives up to exactly 360.0
    if wrapped >= 360.0 {
        0.0
    } else {
        wrapped
    }
}

/// Signed smallest difference `a − b` in degrees, in `(-180, 180]`.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    let d = normalize_degrees(a - b);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Camera→body mounting transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Extrinsics {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Extrinsics {
    /// Validates that `rotation` is a proper rotation (orthonormal, det +1).
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        if rotation.iter().any(|v| !v.is_finite()) || !translation.is_finite() {
            return Err(Error::InvalidExtrinsics("non-finite entry".into()));
        }
        let gram = rotation.transpose() * rotation;
        let off = (gram - Matrix3::identity()).abs().max();
        if off > ROTATION_TOLERANCE {
            return Err(Error::InvalidExtrinsics(format!(
                "rotation is not orthonormal (max |RᵀR − I| = {off:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidExtrinsics(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_row_major(rotation: [f64; 9], translation: [f64; 3]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(&rotation), translation.into())
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::ZERO,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    /// `R·p + T`.
    pub fn apply(&self, p: Point3) -> Point3 {
        let v: Vector3<f64> = p.into();
        Vec3::from(self.rotation * v) + self.translation
    }

    /// `Rᵀ·(p − T)`, the body→camera direction.
    pub fn apply_inverse(&self, p: Point3) -> Point3 {
        let v: Vector3<f64> = (p - self.translation).into();
        Vec3::from(self.rotation.transpose() * v)
    }
}

pub fn camera_to_body(p: Point3, ext: &Extrinsics) -> Point3 {
    ext.apply(p)
}

pub fn body_to_magnetic(p: Point3, yaw: YawDeg) -> Point3 {
    let (s, c) = yaw.radians().sin_cos();
    Vec3::new(p.x * c + p.y * s, p.y * c - p.x * s, p.z)
}

pub fn magnetic_to_body(p: Point3, yaw: YawDeg) -> Point3 {
    let (s, c) = yaw.radians().sin_cos();
    Vec3::new(p.x * c - p.y * s, p.x * s + p.y * c, p.z)
}

/// Direction vector from `a` to `b`.
pub fn relative_direction(a: Point3, b: Point3) -> Vec3 {
    b - a
}

/// Heading of a magnetic-frame vector under the crate's yaw convention.
/// The zero vector (and any purely vertical one) has heading 0.
pub fn heading_of(v: Vec3) -> YawDeg {
    if v.x == 0.0 && v.y == 0.0 {
        return YawDeg(0.0);
    }
    YawDeg(normalize_degrees((-v.y).atan2(v.x).to_degrees()))
}

/// Magnetic-frame core of landmark propagation: given an anchor landmark's
/// position then and now, and another landmark's position then (all
/// robot-centric), predict the other landmark's position now.
pub fn propagate_magnetic(anchor_then: Point3, other_then: Point3, anchor_now: Point3) -> Point3 {
    anchor_now + relative_direction(anchor_then, other_then)
}

/// Recovers the body-frame position at `t2` of a landmark `N2` that was only
/// seen at `t1`, using a landmark `N1` seen at both instants.
///
/// `cn11`: N1 in camera frame at t1, `cn21`: N2 at t1, `cn12`: N1 at t2.
pub fn propagate_landmark(
    cn11: Point3,
    cn21: Point3,
    cn12: Point3,
    ext: &Extrinsics,
    yaw1: YawDeg,
    yaw2: YawDeg,
) -> Point3 {
    let bn11 = camera_to_body(cn11, ext);
    let bn21 = camera_to_body(cn21, ext);
    let bn12 = camera_to_body(cn12, ext);
    let mn11 = body_to_magnetic(bn11, yaw1);
    let mn21 = body_to_magnetic(bn21, yaw1);
    let mn12 = body_to_magnetic(bn12, yaw2);
    let mn22 = propagate_magnetic(mn11, mn21, mn12);
    magnetic_to_body(mn22, yaw2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;

    fn yaw(d: f64) -> YawDeg {
        YawDeg::new(d).unwrap()
    }

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        a.distance(&b) <= tol
    }

    fn rot_z(deg: f64) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Vector3::z_axis(), deg.to_radians()).matrix()
    }

    #[test]
    fn camera_to_body_examples() {
        let id = Extrinsics::identity();
        assert_eq!(camera_to_body(Vec3::new(1.0, 2.0, 3.0), &id), Vec3::new(1.0, 2.0, 3.0));

        let shifted = Extrinsics::new(Matrix3::identity(), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(camera_to_body(Vec3::ZERO, &shifted), Vec3::new(1.0, 0.0, 0.0));

        let ext = Extrinsics::new(rot_z(90.0), Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let out = camera_to_body(Vec3::new(1.0, 0.0, 0.0), &ext);
        assert!(close(out, Vec3::new(0.0, 1.0, 1.0), 1e-12), "{out}");
    }

    #[test]
    fn extrinsics_rejects_bad_rotations() {
        let scaled = Matrix3::identity() * 2.0;
        assert!(matches!(
            Extrinsics::new(scaled, Vec3::ZERO),
            Err(Error::InvalidExtrinsics(_))
        ));
        let mut reflection = Matrix3::identity();
        reflection[(2, 2)] = -1.0;
        assert!(matches!(
            Extrinsics::new(reflection, Vec3::ZERO),
            Err(Error::InvalidExtrinsics(_))
        ));
        let nan = Matrix3::from_element(f64::NAN);
        assert!(Extrinsics::new(nan, Vec3::ZERO).is_err());
    }

    #[test]
    fn extrinsics_inverse_round_trip() {
        let axis = Unit::new_normalize(Vector3::new(0.3, -0.5, 0.8));
        let r = *Rotation3::from_axis_angle(&axis, 1.1).matrix();
        let ext = Extrinsics::new(r, Vec3::new(0.2, -0.1, 0.7)).unwrap();
        let p = Vec3::new(1.5, -2.5, 4.0);
        assert!(close(ext.apply_inverse(ext.apply(p)), p, 1e-9));
    }

    #[test]
    fn body_to_magnetic_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(body_to_magnetic(p, yaw(0.0)), p);
        let out = body_to_magnetic(Vec3::new(1.0, 0.0, 5.0), yaw(90.0));
        assert!(close(out, Vec3::new(0.0, -1.0, 5.0), 1e-12), "{out}");
        let out = body_to_magnetic(Vec3::new(1.0, 1.0, 0.0), yaw(180.0));
        assert!(close(out, Vec3::new(-1.0, -1.0, 0.0), 1e-12), "{out}");
    }

    #[test]
    fn magnetic_to_body_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(magnetic_to_body(p, yaw(0.0)), p);
        let out = magnetic_to_body(Vec3::new(0.0, -1.0, 5.0), yaw(90.0));
        assert!(close(out, Vec3::new(1.0, 0.0, 5.0), 1e-12), "{out}");
        let m = body_to_magnetic(Vec3::new(3.0, 4.0, 0.0), yaw(45.0));
        assert!(close(magnetic_to_body(m, yaw(45.0)), Vec3::new(3.0, 4.0, 0.0), 1e-12));
    }

    #[test]
    fn relative_direction_examples() {
        assert_eq!(relative_direction(Vec3::ZERO, Vec3::ZERO), Vec3::ZERO);
        assert_eq!(
            relative_direction(Vec3::new(1.0, 1.0, 1.0), Vec3::new(2.0, 3.0, 4.0)),
            Vec3::new(1.0, 2.0, 3.0)
        );
        assert_eq!(
            relative_direction(Vec3::new(-1.0, 0.0, 2.0), Vec3::new(1.0, 0.0, 0.0)),
            Vec3::new(2.0, 0.0, -2.0)
        );
    }

    #[test]
    fn yaw_normalization() {
        assert_eq!(yaw(360.0).degrees(), 0.0);
        assert_eq!(yaw(-90.0).degrees(), 270.0);
        assert_eq!(yaw(725.0).degrees(), 5.0);
        assert_eq!(yaw(-1e-20).degrees(), 0.0);
        assert!(YawDeg::new(f64::INFINITY).is_err());
    }

    #[test]
    fn heading_matches_forward_axis() {
        for d in [0.0, 10.0, 90.0, 179.0, 180.0, 270.0, 359.5] {
            let fwd = body_to_magnetic(Vec3::new(2.0, 0.0, 0.0), yaw(d));
            assert!(angle_difference(heading_of(fwd).degrees(), d).abs() < 1e-9);
        }
        assert_eq!(heading_of(Vec3::ZERO).degrees(), 0.0);
    }

    // Forward-simulation oracle. Poses and landmarks live in a global
    // magnetic-aligned frame; the body axes of a robot with heading ψ are
    // the global axes rotated by −ψ about z (nalgebra, not the functions
    // under test).
    struct Pose {
        pos: Vector3<f64>,
        heading: f64,
    }

    fn body_of(world: Vector3<f64>, pose: &Pose) -> Vector3<f64> {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), -pose.heading.to_radians());
        r.inverse() * (world - pose.pos)
    }

    fn camera_of(world: Vector3<f64>, pose: &Pose, r: &Matrix3<f64>, t: &Vector3<f64>) -> Vec3 {
        (r.transpose() * (body_of(world, pose) - t)).into()
    }

    #[allow(clippy::too_many_arguments)]
    fn oracle_case(
        l1: Vector3<f64>,
        l2: Vector3<f64>,
        p1: Pose,
        p2: Pose,
        r: Matrix3<f64>,
        t: Vector3<f64>,
    ) -> (Vec3, Vec3) {
        let ext = Extrinsics::new(r, t.into()).unwrap();
        let cn11 = camera_of(l1, &p1, &r, &t);
        let cn21 = camera_of(l2, &p1, &r, &t);
        let cn12 = camera_of(l1, &p2, &r, &t);
        let got = propagate_landmark(cn11, cn21, cn12, &ext, yaw(p1.heading), yaw(p2.heading));
        (got, body_of(l2, &p2).into())
    }

    fn camera_mount() -> (Matrix3<f64>, Vector3<f64>) {
        let r = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        (r, Vector3::new(0.1, 0.0, 0.5))
    }

    #[test]
    fn propagate_static_robot() {
        let ext = Extrinsics::identity();
        let cn11 = Vec3::new(1.0, 2.0, 0.5);
        let cn21 = Vec3::new(3.0, -1.0, 0.2);
        let out = propagate_landmark(cn11, cn21, cn11, &ext, yaw(30.0), yaw(30.0));
        assert!(close(out, camera_to_body(cn21, &ext), 1e-12));
    }

    #[test]
    fn propagate_pure_translation() {
        let (r, t) = camera_mount();
        let (got, want) = oracle_case(
            Vector3::new(3.0, 0.0, 1.0),
            Vector3::new(5.0, 0.0, 1.5),
            Pose {
                pos: Vector3::zeros(),
                heading: 0.0,
            },
            Pose {
                pos: Vector3::new(1.0, 0.0, 0.0),
                heading: 0.0,
            },
            r,
            t,
        );
        assert!(close(got, want, 1e-9), "{got} vs {want}");
    }

    #[test]
    fn propagate_rotation_in_place() {
        let (r, t) = camera_mount();
        let (got, want) = oracle_case(
            Vector3::new(3.0, 1.0, 1.0),
            Vector3::new(2.0, -2.0, 0.3),
            Pose {
                pos: Vector3::new(0.5, 0.5, 0.0),
                heading: 10.0,
            },
            Pose {
                pos: Vector3::new(0.5, 0.5, 0.0),
                heading: 100.0,
            },
            r,
            t,
        );
        assert!(close(got, want, 1e-9), "{got} vs {want}");
    }

    fn coord() -> impl Strategy<Value = f64> {
        -20.0..20.0f64
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (coord(), coord(), coord()).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn body_to_magnetic_preserves_norm(p in vec3(), d in -720.0..720.0f64) {
            let out = body_to_magnetic(p, yaw(d));
            prop_assert!((out.norm() - p.norm()).abs() < 1e-12 * (1.0 + p.norm()));
        }

        #[test]
        fn magnetic_round_trip(p in vec3(), d in -720.0..720.0f64) {
            let y = yaw(d);
            prop_assert!(close(magnetic_to_body(body_to_magnetic(p, y), y), p, 1e-9));
        }

        #[test]
        fn vector_coordinate_invariance(
            l1 in vec3(), l2 in vec3(),
            x1 in coord(), y1 in coord(), h1 in 0.0..360.0f64,
            x2 in coord(), y2 in coord(), h2 in 0.0..360.0f64,
        ) {
            let p1 = Pose { pos: Vector3::new(x1, y1, 0.0), heading: h1 };
            let p2 = Pose { pos: Vector3::new(x2, y2, 0.0), heading: h2 };
            let v1 = relative_direction(
                body_to_magnetic(body_of(l1.into(), &p1).into(), yaw(h1)),
                body_to_magnetic(body_of(l2.into(), &p1).into(), yaw(h1)),
            );
            let v2 = relative_direction(
                body_to_magnetic(body_of(l1.into(), &p2).into(), yaw(h2)),
                body_to_magnetic(body_of(l2.into(), &p2).into(), yaw(h2)),
            );
            prop_assert!(close(v1, v2, 1e-9));
        }

        #[test]
        fn propagate_matches_forward_oracle(
            l1 in vec3(), l2 in vec3(),
            x1 in coord(), y1 in coord(), h1 in 0.0..360.0f64,
            x2 in coord(), y2 in coord(), h2 in 0.0..360.0f64,
        ) {
            let (r, t) = camera_mount();
            let (got, want) = oracle_case(
                l1.into(), l2.into(),
                Pose { pos: Vector3::new(x1, y1, 0.0), heading: h1 },
                Pose { pos: Vector3::new(x2, y2, 0.0), heading: h2 },
                r, t,
            );
            prop_assert!(close(got, want, 1e-9), "{} vs {}", got, want);
        }
    }
}
