use super::align::{align_plane_to_z0, AlignedPlane};
use super::cluster::euclidean_cluster;
use super::edges::edge_indices;
use super::ellipse::{fit_ellipse_direct, validate_hole, EllipseFit};
use super::ransac::{ransac_plane, Plane, RansacParams};
use super::roi::{passthrough_filter, RoiBounds};
use super::voxel::voxel_downsample;
use super::LidarError;
use crate::cloud::PointCloud;
use crate::geometry::{Point2, Point3, RigidTransform, Vec3};
use crate::registration::{kabsch, mean_squared_error};
use crate::target::TargetGeometry;

/// Labelings whose layout-fit RMS is within this many meters of the best one
/// are treated as tied and resolved geometrically.
pub const ORDER_TIE_TOLERANCE: f64 = 0.01;
const EXACT_TIE: f64 = 1e-6;
const ORIENTATION_MARGIN: f64 = 0.05;
/// Upper bound on validated ellipses considered for subset selection.
const MAX_CANDIDATES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarParams {
    pub ransac: RansacParams,
    pub voxel_leaf: f64,
    pub edge_radius: f64,
    pub edge_gap_deg: f64,
    pub cluster_tolerance: f64,
    pub cluster_min_size: usize,
    pub axis_tol: f64,
    pub ecc_max: f64,
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            ransac: RansacParams::default(),
            voxel_leaf: 0.008,
            edge_radius: 0.03,
            edge_gap_deg: 25.0,
            cluster_tolerance: 0.02,
            cluster_min_size: 15,
            axis_tol: 0.04,
            ecc_max: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoleDetection {
    /// Hole center in the LiDAR frame.
    pub center_3d: Point3,
    /// Fit in the flattened plane frame.
    pub ellipse: EllipseFit,
    pub correspondence_index: usize,
}

/// Hole detections plus the intermediate products, for diagnostics.
#[derive(Debug, Clone)]
pub struct HoleExtraction {
    /// Canonical order: `holes[i].correspondence_index == i`.
    pub holes: [HoleDetection; 4],
    pub plane: Plane,
    pub plane_inliers: PointCloud,
    pub aligned: AlignedPlane,
    pub downsampled: Vec<Point2>,
    pub edge_points: Vec<Point2>,
    pub clusters: Vec<Vec<usize>>,
    /// Every ellipse that passed validation, before subset selection.
    pub validated: Vec<EllipseFit>,
}

impl HoleExtraction {
    pub fn centers(&self) -> [Point3; 4] {
        std::array::from_fn(|i| self.holes[i].center_3d)
    }

    pub fn edge_points_3d(&self) -> Vec<Point3> {
        self.edge_points.iter().map(|p| self.aligned.lift_point(p)).collect()
    }
}

const PERMUTATIONS: [[usize; 4]; 24] = {
    let mut out = [[0; 4]; 24];
    let mut n = 0;
    let mut a = 0;
    while a < 4 {
        let mut b = 0;
        while b < 4 {
            let mut c = 0;
            while c < 4 {
                if a != b && a != c && b != c {
                    out[n] = [a, b, c, 6 - a - b - c];
                    n += 1;
                }
                c += 1;
            }
            b += 1;
        }
        a += 1;
    }
    out
};

struct Labeling {
    perm: [usize; 4],
    rms: f64,
    pose: RigidTransform,
}

fn labelings(centers: &[Point3; 4], target: &TargetGeometry) -> Result<Vec<Labeling>, LidarError> {
    let board = target.hole_centers_board();
    PERMUTATIONS
        .iter()
        .map(|perm| {
            let dst = perm.map(|k| centers[k]);
            let pose = kabsch(board, &dst).map_err(|e| LidarError::DegenerateInput(e.to_string()))?;
            let rms = mean_squared_error(&pose, board, &dst).sqrt();
            Ok(Labeling { perm: *perm, rms, pose })
        })
        .collect()
}

/// Best layout-fit RMS over all labelings of `centers`.
pub fn order_residual(centers: &[Point3; 4], target: &TargetGeometry) -> Result<f64, LidarError> {
    Ok(labelings(centers, target)?
        .iter()
        .map(|l| l.rms)
        .fold(f64::INFINITY, f64::min))
}

/// Returns `perm` such that `centers[perm[i]]` is board hole `i`.
///
/// Primary criterion is the rigid layout-fit residual over all 24 labelings.
/// Labelings tied within [`ORDER_TIE_TOLERANCE`] (layout symmetries) are
/// resolved by preferring a fitted board normal facing the LiDAR origin, then
/// a fitted board `+y` closest to LiDAR `+z` (boards are mounted upright).
pub fn order_hole_centers(centers: &[Point3; 4], target: &TargetGeometry) -> Result<[usize; 4], LidarError> {
    let all = labelings(centers, target)?;
    let best = all.iter().map(|l| l.rms).fold(f64::INFINITY, f64::min);
    let mut tied: Vec<&Labeling> = all
        .iter()
        .filter(|l| l.rms <= best + ORDER_TIE_TOLERANCE.max(EXACT_TIE))
        .collect();

    let centroid = centers.iter().fold(Vec3::zeros(), |acc, p| acc + p.coords) / 4.0;
    if centroid.norm() > 0.0 {
        let to_sensor = -centroid.normalize();
        let facing: Vec<&Labeling> = tied
            .iter()
            .copied()
            .filter(|l| l.pose.apply_vector(&Vec3::z()).dot(&to_sensor) > ORIENTATION_MARGIN)
            .collect();
        if !facing.is_empty() {
            tied = facing;
        }
    }
    if tied.len() > 1 {
        let up = |l: &Labeling| l.pose.apply_vector(&Vec3::y()).z;
        tied.sort_by(|a, b| up(b).total_cmp(&up(a)));
        if up(tied[0]) - up(tied[1]) > ORIENTATION_MARGIN {
            tied.truncate(1);
        }
    }
    tied.sort_by(|a, b| a.rms.total_cmp(&b.rms));
    if tied.len() > 1 && tied[1].rms - tied[0].rms < EXACT_TIE {
        return Err(LidarError::AmbiguousOrder);
    }
    Ok(tied[0].perm)
}

fn choose_four(
    candidates: &[(EllipseFit, Point3)],
    target: &TargetGeometry,
) -> Result<[usize; 4], LidarError> {
    let n = candidates.len();
    let mut best: Option<(f64, [usize; 4])> = None;
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    let idx = [a, b, c, d];
                    let pts = idx.map(|i| candidates[i].1);
                    let Ok(r) = order_residual(&pts, target) else { continue };
                    if best.is_none_or(|(br, _)| r < br) {
                        best = Some((r, idx));
                    }
                }
            }
        }
    }
    best.map(|(_, idx)| idx).ok_or(LidarError::HoleCount { found: n })
}

/// Full LiDAR branch for one scene.
pub fn extract_hole_centers(
    cloud: &PointCloud,
    roi: &RoiBounds,
    target: &TargetGeometry,
    params: &LidarParams,
) -> Result<HoleExtraction, LidarError> {
    let cropped = passthrough_filter(cloud, roi)?;
    let (plane, plane_inliers) = ransac_plane(&cropped, &params.ransac)?;
    let aligned = align_plane_to_z0(&plane, &plane_inliers);
    let downsampled = voxel_downsample(&aligned.points2d, params.voxel_leaf);
    let edge_idx = edge_indices(&downsampled, params.edge_radius, params.edge_gap_deg);
    let edge_points: Vec<Point2> = edge_idx.iter().map(|&i| downsampled[i]).collect();
    let clusters = euclidean_cluster(&edge_points, params.cluster_tolerance, params.cluster_min_size);

    let mut candidates: Vec<(EllipseFit, Point3)> = clusters
        .iter()
        .filter_map(|members| {
            let pts: Vec<Point2> = members.iter().map(|&i| edge_points[i]).collect();
            fit_ellipse_direct(&pts).ok()
        })
        .filter(|e| validate_hole(e, target.hole_radius(), params.axis_tol, params.ecc_max))
        .map(|e| {
            let c = aligned.lift_point(&e.center);
            (e, c)
        })
        .collect();
    let validated: Vec<EllipseFit> = candidates.iter().map(|(e, _)| *e).collect();

    if candidates.len() < 4 {
        return Err(LidarError::HoleCount { found: candidates.len() });
    }
    if candidates.len() > 4 {
        let r = target.hole_radius();
        candidates.sort_by(|a, b| (a.0.semi_major - r).abs().total_cmp(&(b.0.semi_major - r).abs()));
        candidates.truncate(MAX_CANDIDATES);
        let pick = choose_four(&candidates, target)?;
        candidates = pick.iter().map(|&i| candidates[i]).collect();
    }
    let four: [Point3; 4] = std::array::from_fn(|i| candidates[i].1);
    let perm = order_hole_centers(&four, target)?;
    let holes = std::array::from_fn(|i| HoleDetection {
        center_3d: candidates[perm[i]].1,
        ellipse: candidates[perm[i]].0,
        correspondence_index: i,
    });
    Ok(HoleExtraction {
        holes,
        plane,
        plane_inliers,
        aligned,
        downsampled,
        edge_points,
        clusters,
        validated,
    })
}
