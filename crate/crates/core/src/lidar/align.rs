use nalgebra::Matrix3;

use super::ransac::Plane;
use crate::cloud::PointCloud;
use crate::geometry::{Point2, Point3, RigidTransform, Vec3};

/// Flattened plane inliers plus the transform that lifts `(x, y, 0)` back to
/// the LiDAR frame.
#[derive(Debug, Clone)]
pub struct AlignedPlane {
    pub points2d: Vec<Point2>,
    pub lift: RigidTransform,
}

impl AlignedPlane {
    pub fn lift_point(&self, p: &Point2) -> Point3 {
        self.lift.apply(&Point3::new(p.x, p.y, 0.0))
    }
}

/// Plane frame: `z` is the plane normal turned toward the LiDAR origin, `x`
/// is the LiDAR x-axis projected into the plane (the y-axis when x is within
/// 60° of the normal), origin is the foot of the perpendicular from the LiDAR
/// origin.
pub fn plane_frame(plane: &Plane) -> RigidTransform {
    let mut p = *plane;
    let toward_origin = if p.d != 0.0 {
        p.d > 0.0
    } else {
        // origin on the plane: pick the sign by the first nonzero component
        let n = p.normal;
        [n.z, n.y, n.x].into_iter().find(|v| *v != 0.0).unwrap_or(1.0) > 0.0
    };
    if !toward_origin {
        p = p.flipped();
    }
    let n = p.normal.normalize();
    let project = |axis: Vec3| axis - n * n.dot(&axis);
    let mut ex = project(Vec3::x());
    if ex.norm() < 0.5 {
        ex = project(Vec3::y());
    }
    let ex = ex.normalize();
    let ey = n.cross(&ex);
    let r = Matrix3::from_columns(&[ex, ey, n]);
    RigidTransform::from_parts(r, -p.d * n)
}

pub fn align_plane_to_z0(plane: &Plane, inliers: &PointCloud) -> AlignedPlane {
    let lift = plane_frame(plane);
    let flatten = lift.inverse();
    let points2d = inliers
        .points()
        .iter()
        .map(|p| {
            let q = flatten.apply(p);
            Point2::new(q.x, q.y)
        })
        .collect();
    AlignedPlane { points2d, lift }
}
