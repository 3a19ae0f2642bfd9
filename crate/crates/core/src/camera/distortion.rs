use nalgebra::{Matrix2, Vector2};

use super::CameraError;
use crate::geometry::{Point2, Point3};
use crate::target::CameraIntrinsics;

const MAX_ITERS: usize = 50;
/// Convergence threshold in pixels.
const PIXEL_TOL: f64 = 1e-10;

/// Radial-tangential distortion of a normalized image point.
pub fn distort_normalized(p: &Point2, intr: &CameraIntrinsics) -> Point2 {
    let [k1, k2, p1, p2, k3] = intr.distortion;
    let (x, y) = (p.x, p.y);
    let r2 = x * x + y * y;
    let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
    Point2::new(
        x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
        y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y,
    )
}

fn distortion_jacobian(p: &Point2, intr: &CameraIntrinsics) -> Matrix2<f64> {
    let [k1, k2, p1, p2, k3] = intr.distortion;
    let (x, y) = (p.x, p.y);
    let r2 = x * x + y * y;
    let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
    let dradial = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2);
    Matrix2::new(
        radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x,
        2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y,
        2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y,
        radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x,
    )
}

/// Normalized image coordinates → pixels, distortion applied.
pub fn normalized_to_pixel(p: &Point2, intr: &CameraIntrinsics) -> Point2 {
    let d = distort_normalized(p, intr);
    Point2::new(intr.fx * d.x + intr.cx, intr.fy * d.y + intr.cy)
}

/// Projects a camera-frame point to pixels; `None` unless `z > 0`.
pub fn project_point(p: &Point3, intr: &CameraIntrinsics) -> Option<Point2> {
    (p.z > 0.0).then(|| normalized_to_pixel(&Point2::new(p.x / p.z, p.y / p.z), intr))
}

/// Inverts the distortion model by Newton iteration, starting from the
/// distorted normalized coordinates.
pub fn undistort_point(px: &Point2, intr: &CameraIntrinsics) -> Result<Point2, CameraError> {
    let target = Vector2::new((px.x - intr.cx) / intr.fx, (px.y - intr.cy) / intr.fy);
    if intr.distortion.iter().all(|&k| k == 0.0) {
        return Ok(Point2::from(target));
    }
    let scale = intr.fx.max(intr.fy);
    let mut x = target;
    for _ in 0..MAX_ITERS {
        let p = Point2::from(x);
        let r = distort_normalized(&p, intr).coords - target;
        if !r.iter().all(|v| v.is_finite()) {
            break;
        }
        let jac = distortion_jacobian(&p, intr);
        if r.norm() * scale < PIXEL_TOL {
            // a root on a folded branch of the model is not an inverse
            return if jac.determinant() > 0.0 && jac.trace() > 0.0 {
                Ok(p)
            } else {
                Err(CameraError::NoConvergence)
            };
        }
        let step = jac
            .lu()
            .solve(&r)
            .ok_or(CameraError::NoConvergence)?;
        x -= step;
    }
    Err(CameraError::NoConvergence)
}
