use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LidarError;
use crate::cloud::PointCloud;
use crate::geometry::{Point3, Vec3};

/// `normal · p + d = 0`, with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub d: f64,
}

impl Plane {
    pub fn through_points(a: &Point3, b: &Point3, c: &Point3) -> Option<Plane> {
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        let scale = (b - a).norm().max((c - a).norm());
        if !(len > 1e-12 * scale * scale) {
            return None;
        }
        let normal = n / len;
        Some(Plane {
            normal,
            d: -normal.dot(&a.coords),
        })
    }

    /// Total-least-squares plane through `points`.
    pub fn fit(points: &[Point3]) -> Option<Plane> {
        let (mean, cov) = mean_and_scatter(points)?;
        let eig = SymmetricEigen::new(cov);
        let k = eig.eigenvalues.imin();
        let normal = eig.eigenvectors.column(k).normalize();
        Some(Plane {
            normal,
            d: -normal.dot(&mean),
        })
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.coords) + self.d
    }

    pub fn flipped(&self) -> Plane {
        Plane {
            normal: -self.normal,
            d: -self.d,
        }
    }
}

fn mean_and_scatter(points: &[Point3]) -> Option<(Vec3, Matrix3<f64>)> {
    if points.is_empty() {
        return None;
    }
    let mean = points.iter().fold(Vec3::zeros(), |acc, p| acc + p.coords) / points.len() as f64;
    let cov = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p.coords - mean;
        acc + d * d.transpose()
    });
    Some((mean, cov))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Point-to-plane distance for an inlier, meters.
    pub inlier_threshold: f64,
    pub max_iters: usize,
    /// Below this best inlier ratio the run fails with `NoPlane`.
    pub min_inlier_ratio: f64,
    /// Stop sampling once a hypothesis exceeds this inlier ratio.
    pub early_exit_ratio: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_threshold: 0.01,
            max_iters: 1000,
            min_inlier_ratio: 0.2,
            early_exit_ratio: 0.9,
            seed: 0,
        }
    }
}

fn count_inliers(points: &[Point3], plane: &Plane, thr: f64) -> usize {
    points
        .iter()
        .filter(|p| plane.signed_distance(p).abs() <= thr)
        .count()
}

/// Dominant plane by 3-point RANSAC, then a least-squares polish that is
/// kept only if it does not lose inliers.
pub fn ransac_plane(cloud: &PointCloud, params: &RansacParams) -> Result<(Plane, PointCloud), LidarError> {
    let pts = cloud.points();
    if pts.len() < 3 {
        return Err(LidarError::DegenerateInput(format!("{} points, need 3", pts.len())));
    }
    let (_, cov) = mean_and_scatter(pts).expect("non-empty");
    let mut ev = SymmetricEigen::new(cov).eigenvalues;
    ev.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(ev[1] > 1e-12 * ev[0].max(f64::MIN_POSITIVE)) {
        return Err(LidarError::DegenerateInput("points are collinear".into()));
    }

    let thr = params.inlier_threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = pts.len();
    let mut best: Option<(Plane, usize)> = None;
    for _ in 0..params.max_iters {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        for taken in [i.min(j), i.max(j)] {
            if k >= taken {
                k += 1;
            }
        }
        let Some(plane) = Plane::through_points(&pts[i], &pts[j], &pts[k]) else {
            continue;
        };
        let count = count_inliers(pts, &plane, thr);
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((plane, count));
            if count as f64 / n as f64 > params.early_exit_ratio {
                break;
            }
        }
    }
    let Some((mut plane, mut count)) = best else {
        return Err(LidarError::DegenerateInput("every sample was collinear".into()));
    };
    let ratio = count as f64 / n as f64;
    if ratio < params.min_inlier_ratio {
        return Err(LidarError::NoPlane {
            best_ratio: ratio,
            min_ratio: params.min_inlier_ratio,
        });
    }

    let inliers: Vec<Point3> = pts
        .iter()
        .filter(|p| plane.signed_distance(p).abs() <= thr)
        .copied()
        .collect();
    if let Some(refined) = Plane::fit(&inliers) {
        let refined_count = count_inliers(pts, &refined, thr);
        if refined_count >= count {
            plane = refined;
            count = refined_count;
        }
    }
    let mask: Vec<bool> = pts.iter().map(|p| plane.signed_distance(p).abs() <= thr).collect();
    let out = cloud.select(&mask);
    debug_assert_eq!(out.len(), count);
    Ok((plane, out))
}
