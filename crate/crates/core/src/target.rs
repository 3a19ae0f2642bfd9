//! Physical description of the calibration board and the camera it is seen by.
//!
//! Board frame: origin at the board center, board face on `z = 0`, `+z`
//! toward the sensors, `+x` right and `+y` up as seen from the sensors.
//! Hole centers are listed top-left, top-right, bottom-right, bottom-left;
//! that order is the correspondence index used everywhere downstream.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, RigidTransform};

pub const HOLE_COUNT: usize = 4;
pub const MARKER_COUNT: usize = 4;

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Validation { field: String, message: String },
}

impl TargetError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub id: i64,
    #[serde(with = "point_array")]
    pub center_board: Point3,
    pub side_length: f64,
}

impl MarkerSpec {
    /// Corners in top-left, top-right, bottom-right, bottom-left order.
    pub fn corners_board(&self) -> [Point3; 4] {
        let h = self.side_length / 2.0;
        let c = self.center_board;
        [
            Point3::new(c.x - h, c.y + h, c.z),
            Point3::new(c.x + h, c.y + h, c.z),
            Point3::new(c.x + h, c.y - h, c.z),
            Point3::new(c.x - h, c.y - h, c.z),
        ]
    }
}

/// Board layout. Construct through [`TargetGeometry::new`] or
/// [`load_target_config`] so the invariants hold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetGeometry {
    hole_radius: f64,
    #[serde(serialize_with = "point_vec::serialize")]
    hole_centers_board: Vec<Point3>,
    markers: Vec<MarkerSpec>,
}

#[derive(Deserialize)]
struct RawTarget {
    hole_radius: f64,
    hole_centers_board: Vec<[f64; 3]>,
    markers: Vec<MarkerSpec>,
}

impl<'de> Deserialize<'de> for TargetGeometry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawTarget::deserialize(d)?;
        TargetGeometry::new(
            raw.hole_radius,
            raw.hole_centers_board.into_iter().map(Point3::from).collect(),
            raw.markers,
        )
        .map_err(serde::de::Error::custom)
    }
}

impl TargetGeometry {
    pub fn new(
        hole_radius: f64,
        hole_centers_board: Vec<Point3>,
        markers: Vec<MarkerSpec>,
    ) -> Result<Self, TargetError> {
        if !(hole_radius.is_finite() && hole_radius > 0.0) {
            return Err(TargetError::invalid("hole_radius", "must be positive"));
        }
        if hole_centers_board.len() != HOLE_COUNT {
            return Err(TargetError::invalid(
                "hole_centers_board",
                format!("expected {HOLE_COUNT}, got {}", hole_centers_board.len()),
            ));
        }
        for (i, c) in hole_centers_board.iter().enumerate() {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(TargetError::invalid(
                    format!("hole_centers_board[{i}]"),
                    "non-finite",
                ));
            }
            if c.z != 0.0 {
                return Err(TargetError::invalid(
                    format!("hole_centers_board[{i}]"),
                    "z must be 0 in the board frame",
                ));
            }
        }
        for i in 0..HOLE_COUNT {
            for j in i + 1..HOLE_COUNT {
                if (hole_centers_board[i] - hole_centers_board[j]).norm() < 2.0 * hole_radius {
                    return Err(TargetError::invalid(
                        "hole_centers_board",
                        format!("holes {i} and {j} are closer than 2·hole_radius"),
                    ));
                }
            }
        }
        if markers.len() != MARKER_COUNT {
            return Err(TargetError::invalid(
                "markers",
                format!("expected {MARKER_COUNT}, got {}", markers.len()),
            ));
        }
        let mut ids = HashSet::new();
        for (i, m) in markers.iter().enumerate() {
            if !(m.side_length.is_finite() && m.side_length > 0.0) {
                return Err(TargetError::invalid(
                    format!("markers[{i}].side_length"),
                    "must be positive",
                ));
            }
            if m.center_board.z != 0.0 || !m.center_board.iter().all(|v| v.is_finite()) {
                return Err(TargetError::invalid(
                    format!("markers[{i}].center_board"),
                    "must be finite with z = 0",
                ));
            }
            if !ids.insert(m.id) {
                return Err(TargetError::invalid(
                    format!("markers[{i}].id"),
                    format!("duplicate marker id {}", m.id),
                ));
            }
        }
        Ok(Self {
            hole_radius,
            hole_centers_board,
            markers,
        })
    }

    pub fn hole_radius(&self) -> f64 {
        self.hole_radius
    }

    pub fn hole_centers_board(&self) -> &[Point3] {
        &self.hole_centers_board
    }

    pub fn markers(&self) -> &[MarkerSpec] {
        &self.markers
    }

    pub fn marker(&self, id: i64) -> Option<&MarkerSpec> {
        self.markers.iter().find(|m| m.id == id)
    }

    /// Hole centers mapped through `board_pose` (board frame → some sensor
    /// frame), canonical order preserved.
    pub fn hole_centers_in_frame(&self, board_pose: &RigidTransform) -> [Point3; 4] {
        std::array::from_fn(|i| board_pose.apply(&self.hole_centers_board[i]))
    }
}

pub fn load_target_config(path: &Path) -> Result<TargetGeometry, TargetError> {
    let text = std::fs::read_to_string(path).map_err(|source| TargetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_target(&text)
}

pub fn parse_target(text: &str) -> Result<TargetGeometry, TargetError> {
    let raw: RawTarget = serde_json::from_str(text).map_err(|e| TargetError::Parse(e.to_string()))?;
    TargetGeometry::new(
        raw.hole_radius,
        raw.hole_centers_board.into_iter().map(Point3::from).collect(),
        raw.markers,
    )
}

/// Pinhole intrinsics with radial-tangential distortion `[k1, k2, p1, p2, k3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub distortion: [f64; 5],
}

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            distortion: [0.0; 5],
        }
    }

    pub fn validate(&self) -> Result<(), TargetError> {
        if !(self.fx > 0.0 && self.fx.is_finite()) {
            return Err(TargetError::invalid("fx", "must be positive"));
        }
        if !(self.fy > 0.0 && self.fy.is_finite()) {
            return Err(TargetError::invalid("fy", "must be positive"));
        }
        if ![self.cx, self.cy].iter().chain(&self.distortion).all(|v| v.is_finite()) {
            return Err(TargetError::invalid("intrinsics", "non-finite value"));
        }
        Ok(())
    }
}

pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics, TargetError> {
    let text = std::fs::read_to_string(path).map_err(|source| TargetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let intr: CameraIntrinsics =
        serde_json::from_str(&text).map_err(|e| TargetError::Parse(e.to_string()))?;
    intr.validate()?;
    Ok(intr)
}

pub(crate) mod point_array {
    use super::Point3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Point3, s: S) -> Result<S::Ok, S::Error> {
        [p.x, p.y, p.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Point3, D::Error> {
        <[f64; 3]>::deserialize(d).map(Point3::from)
    }
}

pub(crate) mod point_vec {
    use super::Point3;
    use serde::{Serialize, Serializer};

    pub fn serialize<S: Serializer>(ps: &[Point3], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<[f64; 3]> = ps.iter().map(|p| [p.x, p.y, p.z]).collect();
        v.serialize(s)
    }
}
