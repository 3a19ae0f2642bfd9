use std::f64::consts::TAU;

use crate::geometry::Point2;
use crate::spatial::Grid2;

/// Largest circular gap between sorted direction angles, wrap-around
/// included. `None` for an empty set.
pub fn max_angular_gap(angles: &mut [f64]) -> Option<f64> {
    if angles.is_empty() {
        return None;
    }
    angles.sort_unstable_by(f64::total_cmp);
    let wrap = angles[0] + TAU - angles[angles.len() - 1];
    Some(
        angles
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(wrap, f64::max),
    )
}

/// Indices of boundary points: those whose neighbors within `radius` leave an
/// angular gap wider than `gap_threshold_deg`. Isolated points are not edges.
pub fn edge_indices(points: &[Point2], radius: f64, gap_threshold_deg: f64) -> Vec<usize> {
    assert!(radius > 0.0);
    assert!(gap_threshold_deg > 0.0 && gap_threshold_deg < 360.0);
    let threshold = gap_threshold_deg.to_radians();
    let grid = Grid2::new(points, radius);
    let mut angles = Vec::with_capacity(64);
    (0..points.len())
        .filter(|&i| {
            let p = points[i];
            angles.clear();
            grid.for_each_within(points, &p, radius, |j| {
                let d = points[j] - p;
                if j != i && (d.x != 0.0 || d.y != 0.0) {
                    angles.push(d.y.atan2(d.x));
                }
            });
            max_angular_gap(&mut angles).is_some_and(|g| g > threshold)
        })
        .collect()
}

pub fn extract_edge_points(points: &[Point2], radius: f64, gap_threshold_deg: f64) -> Vec<Point2> {
    edge_indices(points, radius, gap_threshold_deg)
        .into_iter()
        .map(|i| points[i])
        .collect()
}
