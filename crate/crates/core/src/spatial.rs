//! Uniform hash grid for exact fixed-radius neighbor queries in 2D.

use std::collections::HashMap;

use crate::geometry::Point2;

pub struct Grid2 {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl Grid2 {
    /// `cell` should be at least the largest query radius.
    pub fn new(points: &[Point2], cell: f64) -> Self {
        assert!(cell > 0.0);
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(p: &Point2, cell: f64) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// Calls `f(j)` for every point `j` with `|p_j − q| ≤ radius`.
    pub fn for_each_within<F: FnMut(usize)>(&self, points: &[Point2], q: &Point2, radius: f64, mut f: F) {
        debug_assert!(radius <= self.cell * (1.0 + 1e-12));
        let (cx, cy) = Self::key(q, self.cell);
        let r2 = radius * radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy)) {
                    for &j in bucket {
                        if (points[j] - q).norm_squared() <= r2 {
                            f(j);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point2> = (0..2000)
            .map(|_| Point2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let radius = 0.07;
        let grid = Grid2::new(&pts, radius);
        for q in pts.iter().take(200) {
            let mut got = Vec::new();
            grid.for_each_within(&pts, q, radius, |j| got.push(j));
            got.sort();
            let want: Vec<usize> = (0..pts.len())
                .filter(|&j| (pts[j] - q).norm_squared() <= radius * radius)
                .collect();
            assert_eq!(got, want);
        }
    }
}
