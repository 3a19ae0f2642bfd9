//! Rigid-motion algebra shared by every pipeline stage.
//!
//! Rotations are stored as 3x3 matrices; [`Quaternion`] only appears at
//! pose-averaging and serialization boundaries.

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;
pub type Point2 = nalgebra::Point2<f64>;

/// Tolerance used for the orthonormality and determinant checks.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (max |R·Rᵀ − I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation has det = {0}, expected +1")]
    NotProper(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("matrix must have 16 entries with last row 0 0 0 1")]
    BadHomogeneous,
}

/// Rotation followed by translation: `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform after checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("rigid transform"));
        }
        let err = (rotation * rotation.transpose() - Matrix3::identity()).amax();
        if err > ROTATION_TOL {
            return Err(GeometryError::NotOrthonormal(err));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::NotProper(det));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a transform from a matrix the caller already knows is a rotation
    /// (SVD products, quaternion conversions).
    pub(crate) fn from_parts(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        debug_assert!((rotation * rotation.transpose() - Matrix3::identity()).amax() < 1e-6);
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::from_parts(Matrix3::identity(), t)
    }

    pub fn from_quaternion(q: &Quaternion, translation: Vec3) -> Self {
        Self::from_parts(q.to_rotation(), translation)
    }

    /// Rotation about a unit `axis` by `angle` radians (Rodrigues).
    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Self {
        Self::from_parts(axis_angle_matrix(axis, angle), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        Self::from_parts(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        Self::from_parts(rt, -(rt * self.translation))
    }

    pub fn quaternion(&self) -> Quaternion {
        Quaternion::from_rotation(&self.rotation)
    }

    /// Geodesic angle between the two rotations, radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self, GeometryError> {
        if values.len() != 16 {
            return Err(GeometryError::BadHomogeneous);
        }
        let last = &values[12..16];
        if last != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::BadHomogeneous);
        }
        let r = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
            values[10],
        );
        Self::new(r, Vec3::new(values[3], values[7], values[11]))
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_homogeneous();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    /// Uniformly distributed rotation with translation components in
    /// `[-max_translation, max_translation]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_translation: f64) -> Self {
        let t = Vec3::from_fn(|_, _| rng.random_range(-max_translation..=max_translation));
        Self::from_parts(random_rotation(rng), t)
    }
}

/// Shoemake's uniform unit-quaternion sampler.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let u3: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    Quaternion::new(b * u3.cos(), a * u2.sin(), a * u2.cos(), b * u3.sin())
        .normalized()
        .to_rotation()
}

pub fn axis_angle_matrix(axis: &Vec3, angle: f64) -> Matrix3<f64> {
    let n = axis.normalize();
    let k = skew(&n);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Angle of a rotation matrix, radians in `[0, π]`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    // atan2 form keeps precision near 0 and π.
    let s = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    let c = r.trace() - 1.0;
    s.atan2(c)
}

/// Rotation vector (axis·angle) of a rotation matrix.
pub fn rotation_log(r: &Matrix3<f64>) -> Vec3 {
    let q = Quaternion::from_rotation(r);
    let v = Vec3::new(q.x, q.y, q.z);
    let s = v.norm();
    if s < 1e-15 {
        return 2.0 * v;
    }
    v * (2.0 * s.atan2(q.w) / s)
}

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        self.as_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    /// Flips the sign so that `w ≥ 0`.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            Self::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            *self
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Shepperd's method, canonicalized to `w ≥ 0`.
    pub fn from_rotation(r: &Matrix3<f64>) -> Self {
        let tr = r.trace();
        let q = if tr > r[(0, 0)] && tr > r[(1, 1)] && tr > r[(2, 2)] {
            let s = 2.0 * (1.0 + tr).sqrt();
            Self::new(
                0.25 * s,
                (r[(2, 1)] - r[(1, 2)]) / s,
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(1, 0)] - r[(0, 1)]) / s,
            )
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = 2.0 * (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt();
            Self::new(
                (r[(2, 1)] - r[(1, 2)]) / s,
                0.25 * s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
            )
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = 2.0 * (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt();
            Self::new(
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                0.25 * s,
                (r[(1, 2)] + r[(2, 1)]) / s,
            )
        } else {
            let s = 2.0 * (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt();
            Self::new(
                (r[(1, 0)] - r[(0, 1)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalized().canonical()
    }

    pub fn to_rotation(&self) -> Matrix3<f64> {
        let Self { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }
}

/// JSON form shared by the extrinsics output and the ground-truth files.
/// Only `matrix_4x4_row_major` is read back; the other fields are for humans
/// and external tools.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformJson {
    pub matrix_4x4_row_major: Vec<f64>,
    #[serde(default)]
    pub quaternion_wxyz: Vec<f64>,
    #[serde(default)]
    pub translation_xyz_m: Vec<f64>,
}

impl From<&RigidTransform> for TransformJson {
    fn from(t: &RigidTransform) -> Self {
        Self {
            matrix_4x4_row_major: t.to_row_major().to_vec(),
            quaternion_wxyz: t.quaternion().as_array().to_vec(),
            translation_xyz_m: t.translation.iter().copied().collect(),
        }
    }
}

impl TryFrom<TransformJson> for RigidTransform {
    type Error = GeometryError;

    fn try_from(j: TransformJson) -> Result<Self, Self::Error> {
        RigidTransform::from_row_major(&j.matrix_4x4_row_major)
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TransformJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = TransformJson::deserialize(d)?;
        RigidTransform::try_from(j).map_err(serde::de::Error::custom)
    }
}

pub fn centroid<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<Point3> {
    let mut sum = Vec3::zeros();
    let mut n = 0usize;
    for p in points {
        sum += p.coords;
        n += 1;
    }
    (n > 0).then(|| Point3::from(sum / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn assert_close(a: &Point3, b: &Point3, tol: f64) {
        assert!((a - b).norm() < tol, "{a} vs {b}");
    }

    #[test]
    fn identity_leaves_points_alone() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(RigidTransform::identity().apply(&p), p);
    }

    #[test]
    fn half_turn_about_z() {
        let t = RigidTransform::from_axis_angle(&Vec3::z(), PI, Vec3::zeros());
        assert_close(&t.apply(&Point3::new(1.0, 0.0, 0.0)), &Point3::new(-1.0, 0.0, 0.0), 1e-15);
    }

    #[test]
    fn apply_matches_explicit_multiply() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let t = RigidTransform::random(&mut rng, 2.0);
        let p = [0.1, 0.2, 0.3];
        let r = t.rotation();
        let tr = t.translation();
        let mut expected = [0.0; 3];
        for (i, e) in expected.iter_mut().enumerate() {
            *e = r[(i, 0)] * p[0] + r[(i, 1)] * p[1] + r[(i, 2)] * p[2] + tr[i];
        }
        let got = t.apply(&Point3::new(p[0], p[1], p[2]));
        for i in 0..3 {
            assert!((got[i] - expected[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn compose_matches_elementwise_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = RigidTransform::random(&mut rng, 1.0);
        let b = RigidTransform::random(&mut rng, 1.0);
        let c = a.compose(&b);
        let (ra, rb) = (a.rotation(), b.rotation());
        for i in 0..3 {
            for j in 0..3 {
                let e: f64 = (0..3).map(|k| ra[(i, k)] * rb[(k, j)]).sum();
                assert!((c.rotation()[(i, j)] - e).abs() < 1e-15);
            }
            let et: f64 =
                (0..3).map(|k| ra[(i, k)] * b.translation()[k]).sum::<f64>() + a.translation()[i];
            assert!((c.translation()[i] - et).abs() < 1e-15);
        }
        assert_eq!(RigidTransform::identity().compose(&b), b);
    }

    #[test]
    fn inverse_cases() {
        assert_eq!(RigidTransform::identity().inverse(), RigidTransform::identity());
        let t = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(*t.inverse().translation(), Vec3::new(0.0, 0.0, -1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = RigidTransform::random(&mut rng, 3.0);
        let inv = t.inverse();
        assert_eq!(*inv.rotation(), t.rotation().transpose());
        for _ in 0..100 {
            let p = Point3::new(rng.random(), rng.random(), rng.random());
            assert_close(&inv.apply(&t.apply(&p)), &p, 1e-12);
        }
        let id = t.compose(&inv);
        assert!((id.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation().norm() < 1e-12);
    }

    #[test]
    fn quaternion_known_values() {
        let q = Quaternion::from_rotation(&Matrix3::identity());
        assert_eq!(q.as_array(), [1.0, 0.0, 0.0, 0.0]);
        let rx = axis_angle_matrix(&Vec3::x(), PI);
        let q = Quaternion::from_rotation(&rx);
        assert!(q.w.abs() < 1e-15 && (q.x - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quaternion_round_trip_many() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let q = Quaternion::from_rotation(&r);
            assert!(q.w >= 0.0);
            assert!((q.norm() - 1.0).abs() < 1e-9);
            assert!((q.to_rotation() - r).amax() < 1e-9);
        }
    }

    #[test]
    fn validation_rejects_bad_rotations() {
        let mirror = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            RigidTransform::new(mirror, Vec3::zeros()),
            Err(GeometryError::NotProper(_))
        ));
        let skewed = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            RigidTransform::new(skewed, Vec3::zeros()),
            Err(GeometryError::NotOrthonormal(_))
        ));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = RigidTransform::random(&mut rng, 1.0);
        let s = serde_json::to_string(&t).unwrap();
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rotation_log_and_angle_agree() {
        let r = axis_angle_matrix(&Vec3::new(1.0, 2.0, -1.0), 0.7);
        assert!((rotation_log(&r).norm() - 0.7).abs() < 1e-12);
        assert!((rotation_angle(&r) - 0.7).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rigid_motion_preserves_distances(seed in any::<u64>(),
                p in prop::array::uniform3(-10.0f64..10.0),
                q in prop::array::uniform3(-10.0f64..10.0)) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let t = RigidTransform::random(&mut rng, 5.0);
                let (p, q) = (Point3::from(p), Point3::from(q));
                let d0 = (p - q).norm();
                let d1 = (t.apply(&p) - t.apply(&q)).norm();
                prop_assert!((d0 - d1).abs() < 1e-9);
            }

            #[test]
            fn compose_is_associative(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = RigidTransform::random(&mut rng, 2.0);
                let b = RigidTransform::random(&mut rng, 2.0);
                let c = RigidTransform::random(&mut rng, 2.0);
                let l = a.compose(&b).compose(&c);
                let r = a.compose(&b.compose(&c));
                prop_assert!((l.rotation() - r.rotation()).amax() < 1e-12);
                prop_assert!((l.translation() - r.translation()).amax() < 1e-12);
            }

            #[test]
            fn compose_applies_right_then_left(seed in any::<u64>(),
                p in prop::array::uniform3(-5.0f64..5.0)) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = RigidTransform::random(&mut rng, 2.0);
                let b = RigidTransform::random(&mut rng, 2.0);
                let p = Point3::from(p);
                let d = (a.compose(&b).apply(&p) - a.apply(&b.apply(&p))).norm();
                prop_assert!(d < 1e-12);
            }
        }
    }
}
