use std::collections::VecDeque;

use crate::geometry::Point2;
use crate::spatial::Grid2;

/// Connected components of the graph joining points at most `tolerance`
/// apart. Components smaller than `min_size` are dropped. Each cluster lists
/// point indices in ascending order; clusters are ordered by their smallest
/// index.
pub fn euclidean_cluster(points: &[Point2], tolerance: f64, min_size: usize) -> Vec<Vec<usize>> {
    assert!(tolerance > 0.0 && min_size >= 1);
    let grid = Grid2::new(points, tolerance);
    let mut visited = vec![false; points.len()];
    let mut clusters = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..points.len() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            grid.for_each_within(points, &points[i], tolerance, |j| {
                if !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            });
        }
        if members.len() >= min_size {
            members.sort_unstable();
            clusters.push(members);
        }
    }
    clusters
}
