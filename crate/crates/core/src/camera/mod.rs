//! Camera branch: marker corner detections → four hole centers in the camera
//! frame.
//!
//! Every marker is solved directly against its corners' board coordinates,
//! so each per-marker pose is an estimate of the same board pose. Those
//! estimates are averaged and the board's hole layout is mapped through the
//! result. Corner pixels are undistorted before the homography is formed.

mod distortion;
mod pnp;

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use distortion::{distort_normalized, normalized_to_pixel, project_point, undistort_point};
pub use pnp::{estimate_homography, refine_pose, reprojection_rms, solve_planar_pnp};

use crate::geometry::{rotation_angle, Point2, Point3, Quaternion, RigidTransform, Vec3};
use crate::io_util::write_atomic;
use crate::target::{CameraIntrinsics, TargetGeometry};

/// Largest pairwise rotation difference accepted when averaging poses.
pub const MAX_POSE_SPREAD_DEG: f64 = 30.0;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed detections: {0}")]
    Parse(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("undistortion did not converge")]
    NoConvergence,
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no pose candidate places the target in front of the camera")]
    BehindCamera,
    #[error("marker poses disagree by {spread_deg:.1}° (limit {MAX_POSE_SPREAD_DEG}°)")]
    InconsistentPoses { spread_deg: f64 },
    #[error("no detected marker id belongs to the target")]
    NoKnownMarkers,
}

/// Corners in top-left, top-right, bottom-right, bottom-left order, pixels,
/// origin at the top-left of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerDetection {
    pub id: i64,
    pub corners_px: [Point2; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub image_size: [u32; 2],
    pub markers: Vec<MarkerDetection>,
}

#[derive(Serialize, Deserialize)]
struct MarkerJson {
    id: i64,
    corners: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct DetectionsJson {
    image_size: [u32; 2],
    markers: Vec<MarkerJson>,
}

impl DetectionSet {
    pub fn from_json(text: &str) -> Result<Self, CameraError> {
        let raw: DetectionsJson = serde_json::from_str(text).map_err(|e| CameraError::Parse(e.to_string()))?;
        let mut seen = HashSet::new();
        let markers = raw
            .markers
            .into_iter()
            .map(|m| {
                if m.corners.len() != 4 {
                    return Err(CameraError::Validation(format!(
                        "marker {}: expected 4 corners, got {}",
                        m.id,
                        m.corners.len()
                    )));
                }
                if !m.corners.iter().flatten().all(|v| v.is_finite()) {
                    return Err(CameraError::Validation(format!("marker {}: non-finite corner", m.id)));
                }
                if !seen.insert(m.id) {
                    return Err(CameraError::Validation(format!("marker {} listed twice", m.id)));
                }
                Ok(MarkerDetection {
                    id: m.id,
                    corners_px: std::array::from_fn(|i| Point2::new(m.corners[i][0], m.corners[i][1])),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            image_size: raw.image_size,
            markers,
        })
    }

    pub fn to_json(&self) -> String {
        let raw = DetectionsJson {
            image_size: self.image_size,
            markers: self
                .markers
                .iter()
                .map(|m| MarkerJson {
                    id: m.id,
                    corners: m.corners_px.iter().map(|p| [p.x, p.y]).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("detections serialize")
    }
}

pub fn load_detections(path: &Path) -> Result<DetectionSet, CameraError> {
    let text = std::fs::read_to_string(path).map_err(|source| CameraError::Io {
        path: path.display().to_string(),
        source,
    })?;
    DetectionSet::from_json(&text)
}

pub fn save_detections(path: &Path, set: &DetectionSet) -> std::io::Result<()> {
    write_atomic(path, set.to_json().as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoardPose {
    /// Board frame → camera frame.
    pub t_cam_board: RigidTransform,
    /// Pixels.
    pub reproj_rms: f64,
}

/// Translation mean and quaternion average (dominant eigenvector of the sum
/// of outer products, so independent of quaternion signs).
pub fn average_poses(poses: &[BoardPose]) -> Result<BoardPose, CameraError> {
    if poses.is_empty() {
        return Err(CameraError::DegenerateConfiguration("no poses to average".into()));
    }
    let transforms: Vec<RigidTransform> = poses.iter().map(|p| p.t_cam_board).collect();
    let spread = rotation_spread(&transforms);
    if spread.to_degrees() > MAX_POSE_SPREAD_DEG {
        return Err(CameraError::InconsistentPoses {
            spread_deg: spread.to_degrees(),
        });
    }
    if poses.len() == 1 {
        return Ok(poses[0].clone());
    }
    let reference = poses[0].t_cam_board.quaternion();
    let mut m = Matrix4::zeros();
    let mut t = Vec3::zeros();
    for p in poses {
        let mut q = p.t_cam_board.quaternion();
        if q.dot(&reference) < 0.0 {
            q = Quaternion::new(-q.w, -q.x, -q.y, -q.z);
        }
        let v = nalgebra::Vector4::from(q.as_array());
        m += v * v.transpose();
        t += p.t_cam_board.translation();
    }
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(top);
    let q = Quaternion::new(v[0], v[1], v[2], v[3]).normalized();
    let n = poses.len() as f64;
    let rms = (poses.iter().map(|p| p.reproj_rms * p.reproj_rms).sum::<f64>() / n).sqrt();
    Ok(BoardPose {
        t_cam_board: RigidTransform::from_quaternion(&q, t / n),
        reproj_rms: rms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    /// Polish the averaged pose on the reprojection error of every detected
    /// corner. Per-marker tilt is poorly observed for small markers, so the
    /// plain average carries centimeter-level lever-arm error at a few meters.
    pub refine_board_pose: bool,
}

impl Default for CameraParams {
    fn default() -> Self {
        Self { refine_board_pose: true }
    }
}

/// Board pose and the per-marker estimates it was averaged from.
#[derive(Debug, Clone)]
pub struct CameraEstimate {
    pub board_pose: BoardPose,
    /// Plain average of the marker poses, before refinement.
    pub averaged_pose: BoardPose,
    pub marker_poses: Vec<(i64, BoardPose)>,
    pub centers: [Point3; 4],
}

pub fn estimate_board(
    detections: &[MarkerDetection],
    target: &TargetGeometry,
    intr: &CameraIntrinsics,
    params: &CameraParams,
) -> Result<CameraEstimate, CameraError> {
    let mut marker_poses = Vec::new();
    let mut object = Vec::new();
    let mut pixels = Vec::new();
    for d in detections {
        let Some(spec) = target.marker(d.id) else { continue };
        let corners = spec.corners_board();
        marker_poses.push((d.id, solve_planar_pnp(&d.corners_px, &corners, intr)?));
        object.extend(corners);
        pixels.extend(d.corners_px);
    }
    if marker_poses.is_empty() {
        return Err(CameraError::NoKnownMarkers);
    }
    let poses: Vec<BoardPose> = marker_poses.iter().map(|(_, p)| p.clone()).collect();
    let mut averaged_pose = average_poses(&poses)?;
    averaged_pose.reproj_rms = reprojection_rms(&averaged_pose.t_cam_board, &object, &pixels, intr);
    let board_pose = if params.refine_board_pose {
        let t = refine_pose(&averaged_pose.t_cam_board, &object, &pixels, intr);
        BoardPose {
            t_cam_board: t,
            reproj_rms: reprojection_rms(&t, &object, &pixels, intr),
        }
    } else {
        averaged_pose.clone()
    };
    let centers = target.hole_centers_in_frame(&board_pose.t_cam_board);
    Ok(CameraEstimate {
        board_pose,
        averaged_pose,
        marker_poses,
        centers,
    })
}

/// Hole centers in the camera frame, canonical target order.
pub fn camera_hole_centers(
    detections: &[MarkerDetection],
    target: &TargetGeometry,
    intr: &CameraIntrinsics,
) -> Result<[Point3; 4], CameraError> {
    estimate_board(detections, target, intr, &CameraParams::default()).map(|e| e.centers)
}

/// Largest rotation angle between any two poses, radians.
pub fn rotation_spread(poses: &[RigidTransform]) -> f64 {
    let mut spread: f64 = 0.0;
    for (i, a) in poses.iter().enumerate() {
        for b in &poses[i + 1..] {
            spread = spread.max(rotation_angle(&(a.rotation().transpose() * b.rotation())));
        }
    }
    spread
}
