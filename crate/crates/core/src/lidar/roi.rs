use serde::{Deserialize, Serialize};

use super::LidarError;
use crate::cloud::PointCloud;

/// Axis-aligned crop box in the LiDAR frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl RoiBounds {
    pub fn validate(&self) -> Result<(), LidarError> {
        for (axis, lo, hi) in [
            ("x", self.x_min, self.x_max),
            ("y", self.y_min, self.y_max),
            ("z", self.z_min, self.z_max),
        ] {
            if !(lo < hi) {
                return Err(LidarError::InvalidRoi(format!("{axis}_min must be < {axis}_max")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &crate::geometry::Point3) -> bool {
        (self.x_min..=self.x_max).contains(&p.x)
            && (self.y_min..=self.y_max).contains(&p.y)
            && (self.z_min..=self.z_max).contains(&p.z)
    }
}

/// Keeps exactly the points inside `roi` (bounds inclusive), in input order.
pub fn passthrough_filter(cloud: &PointCloud, roi: &RoiBounds) -> Result<PointCloud, LidarError> {
    roi.validate()?;
    let out = cloud.retain_by(|p| roi.contains(p));
    if out.is_empty() {
        return Err(LidarError::EmptyRoi);
    }
    Ok(out)
}
