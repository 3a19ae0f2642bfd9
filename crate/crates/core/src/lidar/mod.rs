//! LiDAR branch: raw cloud → four hole centers in the LiDAR frame.
//!
//! Stages: pass-through ROI crop, RANSAC plane, flatten to `z = 0`, 2D voxel
//! downsample, angular-gap edge test, Euclidean clustering, direct ellipse
//! fit, geometric validation, lift back to 3D and label.

mod align;
mod cluster;
mod edges;
mod ellipse;
mod holes;
mod ransac;
mod roi;
mod voxel;

use thiserror::Error;

pub use align::{align_plane_to_z0, AlignedPlane};
pub use cluster::euclidean_cluster;
pub use edges::{edge_indices, extract_edge_points, max_angular_gap};
pub use ellipse::{ellipse_center, fit_ellipse_direct, validate_hole, Conic, EllipseFit};
pub use holes::{
    extract_hole_centers, order_hole_centers, order_residual, HoleDetection, HoleExtraction,
    LidarParams, ORDER_TIE_TOLERANCE,
};
pub use ransac::{ransac_plane, Plane, RansacParams};
pub use roi::{passthrough_filter, RoiBounds};
pub use voxel::voxel_downsample;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LidarError {
    #[error("no points survive the ROI pass-through filter")]
    EmptyRoi,
    #[error("invalid ROI: {0}")]
    InvalidRoi(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no dominant plane: best inlier ratio {best_ratio:.3} < {min_ratio:.3}")]
    NoPlane { best_ratio: f64, min_ratio: f64 },
    #[error("ellipse fit failed: {0}")]
    Fit(String),
    #[error("degenerate conic (B² − 4AC = 0)")]
    DegenerateConic,
    #[error("expected 4 validated holes, found {found}")]
    HoleCount { found: usize },
    #[error("hole ordering is ambiguous")]
    AmbiguousOrder,
}
