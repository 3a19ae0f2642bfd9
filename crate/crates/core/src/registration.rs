//! Closed-form rigid registration of corresponded hole centers, jointly over
//! any number of scenes.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{Matrix3, SymmetricEigen, SVD};
use thiserror::Error;

use crate::geometry::{centroid, Point3, RigidTransform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("malformed scene '{scene}': {reason}")]
    SceneMismatch { scene: String, reason: String },
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]` (Kabsch).
/// A reflection in the unconstrained solution is corrected by flipping the
/// weakest singular direction, so `det(R) = +1` always.
pub fn kabsch(src: &[Point3], dst: &[Point3]) -> Result<RigidTransform, RegistrationError> {
    if src.len() != dst.len() {
        return Err(RegistrationError::DegenerateInput(format!(
            "{} source vs {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(RegistrationError::DegenerateInput(format!("{} points, need 3", src.len())));
    }
    let cs = centroid(src).expect("non-empty");
    let cd = centroid(dst).expect("non-empty");

    let mut src_scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let a = s - cs;
        let b = d - cd;
        src_scatter += a * a.transpose();
        cross += a * b.transpose();
    }
    let mut ev = SymmetricEigen::new(src_scatter).eigenvalues;
    ev.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(ev[1] > 1e-12 * ev[0]) {
        return Err(RegistrationError::DegenerateInput(
            "source points are collinear or coincident".into(),
        ));
    }

    let svd = SVD::new(cross, true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        let k = svd.singular_values.imin();
        fix[(k, k)] = -1.0;
    }
    let rotation = v * fix * u.transpose();
    let translation = cd.coords - rotation * cs.coords;
    Ok(RigidTransform::from_parts(rotation, translation))
}

/// One paired capture: index `i` of the LiDAR set corresponds to index `i`
/// of the camera set.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationScene {
    pub scene_id: String,
    pub centers_lidar: [Point3; 4],
    pub centers_camera: [Point3; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub rms_total: f64,
    pub rms_per_scene: BTreeMap<String, f64>,
    /// `‖p_C − T·p_L‖` for every correspondence, scenes in input order.
    pub per_point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// LiDAR frame → camera frame.
    pub t_cl: RigidTransform,
    pub residuals: Residuals,
}

impl CalibrationResult {
    pub fn rms_total(&self) -> f64 {
        self.residuals.rms_total
    }
}

fn check_scenes(scenes: &[CalibrationScene]) -> Result<(), RegistrationError> {
    if scenes.is_empty() {
        return Err(RegistrationError::DegenerateInput("no scenes".into()));
    }
    let mut ids = HashSet::new();
    for s in scenes {
        let mismatch = |reason: &str| RegistrationError::SceneMismatch {
            scene: s.scene_id.clone(),
            reason: reason.into(),
        };
        if !ids.insert(s.scene_id.as_str()) {
            return Err(mismatch("duplicate scene id"));
        }
        if s
            .centers_lidar
            .iter()
            .chain(&s.centers_camera)
            .any(|p| !p.iter().all(|v| v.is_finite()))
        {
            return Err(mismatch("non-finite hole center"));
        }
    }
    Ok(())
}

/// RMS of the correspondence distances under `t_cl`; no fitting.
pub fn evaluate_residual(t_cl: &RigidTransform, scenes: &[CalibrationScene]) -> Residuals {
    let mut per_point = Vec::with_capacity(4 * scenes.len());
    let mut rms_per_scene = BTreeMap::new();
    for s in scenes {
        let mut sum = 0.0;
        for (l, c) in s.centers_lidar.iter().zip(&s.centers_camera) {
            let r = (c - t_cl.apply(l)).norm();
            sum += r * r;
            per_point.push(r);
        }
        rms_per_scene.insert(s.scene_id.clone(), (sum / 4.0).sqrt());
    }
    let total = per_point.iter().map(|r| r * r).sum::<f64>();
    Residuals {
        rms_total: if per_point.is_empty() { 0.0 } else { (total / per_point.len() as f64).sqrt() },
        rms_per_scene,
        per_point,
    }
}

/// Single stacked Kabsch solve over all `4·N` correspondences.
pub fn joint_calibrate(scenes: &[CalibrationScene]) -> Result<CalibrationResult, RegistrationError> {
    check_scenes(scenes)?;
    let src: Vec<Point3> = scenes.iter().flat_map(|s| s.centers_lidar).collect();
    let dst: Vec<Point3> = scenes.iter().flat_map(|s| s.centers_camera).collect();
    let t_cl = kabsch(&src, &dst)?;
    Ok(CalibrationResult {
        t_cl,
        residuals: evaluate_residual(&t_cl, scenes),
    })
}

/// Mean squared correspondence error for arbitrary point lists.
pub fn mean_squared_error(t: &RigidTransform, src: &[Point3], dst: &[Point3]) -> f64 {
    let sum: f64 = src.iter().zip(dst).map(|(s, d)| (d - t.apply(s)).norm_squared()).sum();
    sum / src.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle_matrix, Vec3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn identity_when_sets_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 6);
        let t = kabsch(&pts, &pts).unwrap();
        assert!((t.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!(t.translation().norm() < 1e-12);
    }

    #[test]
    fn quarter_turn_about_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = random_points(&mut rng, 6);
        let r = axis_angle_matrix(&Vec3::z(), FRAC_PI_2);
        let dst: Vec<Point3> = src.iter().map(|p| Point3::from(r * p.coords)).collect();
        let t = kabsch(&src, &dst).unwrap();
        assert!((t.rotation() - r).amax() < 1e-12);
        assert!(t.translation().norm() < 1e-12);
    }

    #[test]
    fn recovers_random_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = RigidTransform::random(&mut rng, 2.0);
        let src = random_points(&mut rng, 12);
        let dst: Vec<Point3> = src.iter().map(|p| truth.apply(p)).collect();
        let t = kabsch(&src, &dst).unwrap();
        assert!((t.rotation() - truth.rotation()).norm() < 1e-10);
        assert!((t.translation() - truth.translation()).norm() < 1e-10);
    }

    #[test]
    fn collinear_source_is_degenerate() {
        let src: Vec<Point3> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(kabsch(&src, &src), Err(RegistrationError::DegenerateInput(_))));
        let same = vec![Point3::origin(); 4];
        assert!(matches!(kabsch(&same, &same), Err(RegistrationError::DegenerateInput(_))));
    }

    #[test]
    fn translated_identity_residual() {
        let pts = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 1.0, 0.5),
        ];
        let scene = CalibrationScene {
            scene_id: "a".into(),
            centers_lidar: pts,
            centers_camera: pts.map(|p| p + Vec3::new(0.0, 0.0, 1.0)),
        };
        let r = evaluate_residual(&RigidTransform::identity(), &[scene.clone()]);
        assert!((r.rms_total - 1.0).abs() < 1e-15);
        let res = joint_calibrate(&[scene]).unwrap();
        assert!(res.rms_total() < 1e-12);
    }

    #[test]
    fn duplicate_scene_ids_are_rejected() {
        let pts = [Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0), Point3::new(1.0, 1.0, 0.0)];
        let s = CalibrationScene { scene_id: "x".into(), centers_lidar: pts, centers_camera: pts };
        assert!(matches!(
            joint_calibrate(&[s.clone(), s]),
            Err(RegistrationError::SceneMismatch { .. })
        ));
    }
}
