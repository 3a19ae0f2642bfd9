use std::collections::HashMap;

use crate::geometry::Point2;

/// Replaces the points of each occupied `leaf × leaf` cell by their centroid.
/// Output is ordered by cell index (row-major on `(ix, iy)`).
pub fn voxel_downsample(points: &[Point2], leaf: f64) -> Vec<Point2> {
    assert!(leaf > 0.0, "voxel leaf must be positive");
    let mut cells: HashMap<(i64, i64), (f64, f64, usize)> = HashMap::new();
    for p in points {
        let key = ((p.x / leaf).floor() as i64, (p.y / leaf).floor() as i64);
        let e = cells.entry(key).or_insert((0.0, 0.0, 0));
        e.0 += p.x;
        e.1 += p.y;
        e.2 += 1;
    }
    let mut cells: Vec<_> = cells.into_iter().collect();
    cells.sort_unstable_by_key(|(k, _)| *k);
    cells
        .into_iter()
        .map(|(_, (sx, sy, n))| Point2::new(sx / n as f64, sy / n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn duplicates_collapse() {
        let p = Point2::new(0.1234, -0.5);
        assert_eq!(voxel_downsample(&[p, p], 0.008), vec![p]);
    }

    #[test]
    fn distinct_cells_survive() {
        let out = voxel_downsample(&[Point2::new(0.0, 0.0), Point2::new(1.0, 1.0)], 0.008);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn dense_disk_one_centroid_per_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let leaf = 0.008;
        let pts: Vec<Point2> = (0..50_000)
            .map(|_| {
                let r = 0.3 * rng.random::<f64>().sqrt();
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                Point2::new(r * t.cos(), r * t.sin())
            })
            .collect();
        let out = voxel_downsample(&pts, leaf);
        let occupied: HashSet<(i64, i64)> = pts
            .iter()
            .map(|p| ((p.x / leaf).floor() as i64, (p.y / leaf).floor() as i64))
            .collect();
        assert_eq!(out.len(), occupied.len());
        let mut seen = HashSet::new();
        for q in &out {
            let key = ((q.x / leaf).floor() as i64, (q.y / leaf).floor() as i64);
            assert!(occupied.contains(&key), "centroid left its cell");
            assert!(seen.insert(key), "two outputs in one cell");
        }
        assert!(out.len() <= pts.len());
    }
}
