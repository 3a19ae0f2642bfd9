use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, SymmetricEigen, Vector3, Vector6};

use super::distortion::{project_point, undistort_point};
use super::{BoardPose, CameraError};
use crate::geometry::{axis_angle_matrix, Point2, Point3, RigidTransform, Vec3};
use crate::target::CameraIntrinsics;

const FLATNESS_TOL: f64 = 1e-8;
const COLLINEAR_TOL: f64 = 1e-10;

/// Scatter eigen-decomposition, eigenvalues descending.
fn principal_axes(points: &[Vec3]) -> (Vector3<f64>, Matrix3<f64>) {
    let mut s = Matrix3::zeros();
    for p in points {
        s += p * p.transpose();
    }
    let eig = SymmetricEigen::new(s);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vector3::from_fn(|i, _| eig.eigenvalues[order[i]]);
    let vectors = Matrix3::from_columns(&order.map(|i| eig.eigenvectors.column(i).into_owned()));
    (values, vectors)
}

/// Rigid map from the object points to a frame where they lie on `z = 0`
/// centered at the origin.
fn object_plane_frame(object: &[Point3]) -> Result<RigidTransform, CameraError> {
    let c = crate::geometry::centroid(object).expect("non-empty");
    let centered: Vec<Vec3> = object.iter().map(|p| p - c).collect();
    let (values, mut axes) = principal_axes(&centered);
    if !(values[1] > COLLINEAR_TOL * values[0]) {
        return Err(CameraError::DegenerateConfiguration("object points are collinear".into()));
    }
    if values[2] > FLATNESS_TOL * values[0] {
        return Err(CameraError::DegenerateConfiguration("object points are not coplanar".into()));
    }
    let e3 = axes.column(0).cross(&axes.column(1));
    axes.set_column(2, &e3);
    let rot = axes.transpose();
    Ok(RigidTransform::from_parts(rot, -(rot * c.coords)))
}

/// Hartley normalization: centroid to origin, mean distance √2.
fn normalizing_transform(points: &[Point2]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().fold(Point2::origin().coords, |a, p| a + p.coords) / n;
    let mean_dist = points.iter().map(|p| (p.coords - c).norm()).sum::<f64>() / n;
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// DLT homography `dst ~ H·src` from ≥ 4 correspondences.
pub fn estimate_homography(src: &[Point2], dst: &[Point2]) -> Result<Matrix3<f64>, CameraError> {
    assert_eq!(src.len(), dst.len());
    if src.len() < 4 {
        return Err(CameraError::DegenerateConfiguration(format!("{} points, need 4", src.len())));
    }
    let ts = normalizing_transform(src);
    let td = normalizing_transform(dst);
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let s = ts * Vector3::new(s.x, s.y, 1.0);
        let d = td * Vector3::new(d.x, d.y, 1.0);
        let (x, y) = (s.x, s.y);
        let (u, v) = (d.x, d.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for k in 0..9 {
            a[(2 * i, k)] = r0[k];
            a[(2 * i + 1, k)] = r1[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let sv = &svd.singular_values;
    let k = sv.imin();
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // a second (near-)null direction means the correspondences do not fix H
    if !(sorted[7] > 1e-10 * sorted[0]) {
        return Err(CameraError::DegenerateConfiguration("homography is underdetermined".into()));
    }
    let h = v_t.row(k);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().expect("similarity is invertible");
    let hm = td_inv * hn * ts;
    let scale = hm[(2, 2)];
    if scale.abs() < 1e-300 {
        return Err(CameraError::DegenerateConfiguration("homography maps origin to infinity".into()));
    }
    Ok(hm / scale)
}

/// Rotation taking `+z` onto the direction of `v`.
fn rotation_z_to(v: &Vec3) -> Matrix3<f64> {
    let t = v.normalize();
    let axis = Vec3::z().cross(&t);
    let s = axis.norm();
    if s < 1e-15 {
        return Matrix3::identity();
    }
    let angle = s.atan2(t.z);
    crate::geometry::axis_angle_matrix(&(axis / s), angle)
}

/// Both rotations consistent with a plane-to-image homography whose model
/// points are centered at the origin. `h` maps model `(X, Y)` to normalized
/// image coordinates.
fn planar_rotation_candidates(h: &Matrix3<f64>) -> Result<[Matrix3<f64>; 2], CameraError> {
    let h = h / h[(2, 2)];
    let v = (h[(0, 2)], h[(1, 2)]);
    let j = Matrix2::new(
        h[(0, 0)] - h[(2, 0)] * v.0,
        h[(0, 1)] - h[(2, 1)] * v.0,
        h[(1, 0)] - h[(2, 0)] * v.1,
        h[(1, 1)] - h[(2, 1)] * v.1,
    );
    let rv = rotation_z_to(&Vec3::new(v.0, v.1, 1.0));
    let proj = nalgebra::Matrix2x3::new(1.0, 0.0, -v.0, 0.0, 1.0, -v.1);
    let b = proj * rv.fixed_columns::<2>(0);
    let b_inv = b
        .try_inverse()
        .ok_or_else(|| CameraError::DegenerateConfiguration("singular view projection".into()))?;
    let a = b_inv * j;
    let gamma = a.singular_values().max();
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(CameraError::DegenerateConfiguration("degenerate homography jacobian".into()));
    }
    let r22 = a / gamma;
    let m = Matrix2::identity() - r22.transpose() * r22;
    let b0 = m[(0, 0)].max(0.0).sqrt();
    let b1 = m[(1, 1)].max(0.0).sqrt() * if m[(0, 1)] < 0.0 { -1.0 } else { 1.0 };
    let build = |sign: f64| {
        let c0 = Vec3::new(r22[(0, 0)], r22[(1, 0)], sign * b0);
        let c1 = Vec3::new(r22[(0, 1)], r22[(1, 1)], sign * b1);
        let c2 = c0.cross(&c1);
        rv * Matrix3::from_columns(&[c0, c1, c2])
    };
    Ok([build(1.0), build(-1.0)])
}

/// Least-squares translation for fixed `rotation` from normalized image
/// observations of `object` points.
fn translation_for(rotation: &Matrix3<f64>, object: &[Point3], image: &[Point2]) -> Vec3 {
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (p, m) in object.iter().zip(image) {
        let q = rotation * p.coords;
        let rows = [
            (Vector3::new(1.0, 0.0, -m.x), m.x * q.z - q.x),
            (Vector3::new(0.0, 1.0, -m.y), m.y * q.z - q.y),
        ];
        for (r, b) in rows {
            ata += r * r.transpose();
            atb += r * b;
        }
    }
    ata.lu().solve(&atb).unwrap_or_else(Vector3::zeros)
}

/// Pixel reprojection RMS of `object` under `pose`; infinite if any point
/// falls behind the camera.
pub fn reprojection_rms(pose: &RigidTransform, object: &[Point3], pixels: &[Point2], intr: &CameraIntrinsics) -> f64 {
    let mut sum = 0.0;
    for (p, px) in object.iter().zip(pixels) {
        match project_point(&pose.apply(p), intr) {
            Some(q) => sum += (q - px).norm_squared(),
            None => return f64::INFINITY,
        }
    }
    (sum / object.len() as f64).sqrt()
}

/// Pose of a planar object from ≥ 4 pixel observations: homography on
/// undistorted coordinates, the two planar rotation candidates, linear
/// translation for each, a local reprojection polish, then the candidate with
/// the lowest pixel reprojection RMS and positive depth.
pub fn solve_planar_pnp(
    corners_px: &[Point2],
    object: &[Point3],
    intr: &CameraIntrinsics,
) -> Result<BoardPose, CameraError> {
    intr.validate().map_err(|e| CameraError::Validation(e.to_string()))?;
    if corners_px.len() != object.len() {
        return Err(CameraError::Validation(format!(
            "{} pixels for {} object points",
            corners_px.len(),
            object.len()
        )));
    }
    if object.len() < 4 {
        return Err(CameraError::DegenerateConfiguration(format!("{} points, need 4", object.len())));
    }
    let to_plane = object_plane_frame(object)?;
    let local: Vec<Point3> = object.iter().map(|p| to_plane.apply(p)).collect();
    let model: Vec<Point2> = local.iter().map(|p| Point2::new(p.x, p.y)).collect();
    let image = corners_px
        .iter()
        .map(|p| undistort_point(p, intr))
        .collect::<Result<Vec<_>, _>>()?;
    let image_centered: Vec<Vec3> = {
        let pts: Vec<Vec3> = image.iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect();
        let c = pts.iter().sum::<Vec3>() / pts.len() as f64;
        pts.iter().map(|p| p - c).collect()
    };
    let (spread, _) = principal_axes(&image_centered);
    if !(spread[1] > COLLINEAR_TOL * spread[0]) {
        return Err(CameraError::DegenerateConfiguration("image points are collinear".into()));
    }

    let h = estimate_homography(&model, &image)?;
    let mut best: Option<BoardPose> = None;
    for rotation in planar_rotation_candidates(&h)? {
        let translation = translation_for(&rotation, &local, &image);
        if !(translation.z > 0.0) {
            continue;
        }
        let Ok(local_pose) = RigidTransform::new(orthonormalize(&rotation), translation) else {
            continue;
        };
        let pose = refine_pose(&local_pose.compose(&to_plane), object, corners_px, intr);
        if !(pose.translation().z > 0.0) {
            continue;
        }
        let rms = reprojection_rms(&pose, object, corners_px, intr);
        if !rms.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| rms < b.reproj_rms) {
            best = Some(BoardPose {
                t_cam_board: pose,
                reproj_rms: rms,
            });
        }
    }
    best.ok_or(CameraError::BehindCamera)
}

/// Levenberg-Marquardt refinement of `pose` on pixel reprojection error of
/// every `object`/`pixels` pair. The update is a left-multiplied rotation
/// vector plus a translation offset.
pub fn refine_pose(
    pose: &RigidTransform,
    object: &[Point3],
    pixels: &[Point2],
    intr: &CameraIntrinsics,
) -> RigidTransform {
    const MAX_ITERS: usize = 50;
    const STEP: f64 = 1e-7;
    let apply = |base: &RigidTransform, delta: &Vector6<f64>| {
        let w = Vec3::new(delta[0], delta[1], delta[2]);
        let angle = w.norm();
        let r = if angle > 0.0 { axis_angle_matrix(&(w / angle), angle) } else { Matrix3::identity() };
        RigidTransform::from_parts(r * base.rotation(), base.translation() + Vec3::new(delta[3], delta[4], delta[5]))
    };
    let residuals = |p: &RigidTransform| -> Option<DVector<f64>> {
        let mut r = DVector::zeros(2 * object.len());
        for (i, (o, px)) in object.iter().zip(pixels).enumerate() {
            let q = project_point(&p.apply(o), intr)?;
            r[2 * i] = q.x - px.x;
            r[2 * i + 1] = q.y - px.y;
        }
        Some(r)
    };
    let mut current = *pose;
    let Some(mut r) = residuals(&current) else { return current };
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..MAX_ITERS {
        let mut jac = DMatrix::zeros(r.len(), 6);
        for k in 0..6 {
            let mut d = Vector6::zeros();
            d[k] = STEP;
            let plus = residuals(&apply(&current, &d));
            d[k] = -STEP;
            let minus = residuals(&apply(&current, &d));
            let (Some(plus), Some(minus)) = (plus, minus) else { return current };
            jac.set_column(k, &((plus - minus) / (2.0 * STEP)));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for k in 0..6 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else { break };
            let candidate = apply(&current, &Vector6::from_iterator(step.iter().copied()));
            if let Some(rc) = residuals(&candidate) {
                let c = rc.norm_squared();
                if c < cost {
                    let converged = step.norm() < 1e-12 || cost - c < 1e-15 * cost;
                    current = RigidTransform::from_parts(orthonormalize(candidate.rotation()), *candidate.translation());
                    r = rc;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = !converged;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    current
}

/// Nearest rotation in the Frobenius sense.
fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}
