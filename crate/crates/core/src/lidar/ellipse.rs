//! Direct least-squares ellipse fitting.
//!
//! Minimizes the algebraic residual of `Ax² + Bxy + Cy² + Dx + Ey + F = 0`
//! subject to `4AC − B² = 1`, solved through the partitioned 3×3 reduction
//! (quadratic block via a small eigenproblem, linear block by back
//! substitution). Points are centered and isotropically scaled first; the
//! constraint is invariant under rotation, so the fit is equivariant under
//! rigid motions of the input.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector3, SVD};

use super::LidarError;
use crate::geometry::Point2;

/// Coefficients `[A, B, C, D, E, F]`.
pub type Conic = [f64; 6];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseFit {
    /// Normalized so that `4AC − B² = 1` and `A + C > 0`.
    pub conic: Conic,
    pub center: Point2,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Direction of the major axis from +x, radians in (−π/2, π/2].
    pub angle: f64,
    pub eccentricity: f64,
    pub support_count: usize,
}

impl EllipseFit {
    pub fn evaluate(&self, p: &Point2) -> f64 {
        eval_conic(&self.conic, p)
    }
}

pub fn eval_conic(c: &Conic, p: &Point2) -> f64 {
    let [a, b, cc, d, e, f] = *c;
    a * p.x * p.x + b * p.x * p.y + cc * p.y * p.y + d * p.x + e * p.y + f
}

/// Center of a central conic: `x = (2CD − BE)/(B² − 4AC)`,
/// `y = (2AE − BD)/(B² − 4AC)`.
pub fn ellipse_center(conic: &Conic) -> Result<Point2, LidarError> {
    let [a, b, c, d, e, _] = *conic;
    let disc = b * b - 4.0 * a * c;
    if disc == 0.0 || !disc.is_finite() {
        return Err(LidarError::DegenerateConic);
    }
    Ok(Point2::new((2.0 * c * d - b * e) / disc, (2.0 * a * e - b * d) / disc))
}

fn fit_err(msg: &str) -> LidarError {
    LidarError::Fit(msg.to_string())
}

/// Fits the constrained conic to normalized points; returns `[a; T a]`.
fn solve_normalized(points: &[Point2]) -> Result<Conic, LidarError> {
    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let d1 = Vector3::new(p.x * p.x, p.x * p.y, p.y * p.y);
        let d2 = Vector3::new(p.x, p.y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    // linear block is singular exactly when the points are collinear
    let sv = s3.singular_values();
    if !(sv.min() > 1e-12 * sv.max()) {
        return Err(fit_err("collinear or coincident points"));
    }
    let s3_inv = s3.try_inverse().ok_or_else(|| fit_err("singular scatter"))?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // premultiply by the inverse of the constraint matrix [[0,0,2],[0,-1,0],[2,0,0]]
    let reduced = Matrix3::from_rows(&[m.row(2) / 2.0, -m.row(1), m.row(0) / 2.0]);

    let mut best: Option<(f64, Vector3<f64>)> = None;
    let scale = reduced.amax().max(f64::MIN_POSITIVE);
    for lambda in reduced.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * scale {
            continue;
        }
        let shifted = reduced - Matrix3::identity() * lambda.re;
        let svd = SVD::new(shifted, false, true);
        let v_t = svd.v_t.ok_or_else(|| fit_err("SVD failed"))?;
        let k = svd.singular_values.imin();
        let v: Vector3<f64> = v_t.row(k).transpose();
        let constraint = 4.0 * v[0] * v[2] - v[1] * v[1];
        if constraint <= 0.0 {
            continue;
        }
        let cost = (v.transpose() * m * v)[0] / constraint;
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, v));
        }
    }
    let (_, a1) = best.ok_or_else(|| fit_err("no ellipse-signed eigenvector"))?;
    let a2 = t * a1;
    Ok([a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]])
}

fn normalize_conic(c: Conic) -> Result<Conic, LidarError> {
    let k = 4.0 * c[0] * c[2] - c[1] * c[1];
    if !(k > 0.0) {
        return Err(fit_err("conic is not an ellipse"));
    }
    let mut s = 1.0 / k.sqrt();
    if c[0] + c[2] < 0.0 {
        s = -s;
    }
    Ok(c.map(|v| v * s))
}

/// Semi-axes (major, minor) and major-axis angle of a normalized ellipse
/// conic with known center.
fn axes(conic: &Conic, center: &Point2) -> Result<(f64, f64, f64), LidarError> {
    let [a, b, c, d, e, f] = *conic;
    let f_center = f + 0.5 * (d * center.x + e * center.y);
    let q = Matrix2::new(a, b / 2.0, b / 2.0, c);
    let eig = SymmetricEigen::new(q);
    let (i_min, i_max) = if eig.eigenvalues[0] <= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let (l_min, l_max) = (eig.eigenvalues[i_min], eig.eigenvalues[i_max]);
    if !(l_min > 0.0 && f_center < 0.0) {
        return Err(fit_err("imaginary ellipse"));
    }
    let major = (-f_center / l_min).sqrt();
    let minor = (-f_center / l_max).sqrt();
    let dir = eig.eigenvectors.column(i_min);
    let mut angle = dir[1].atan2(dir[0]);
    if angle <= -std::f64::consts::FRAC_PI_2 {
        angle += std::f64::consts::PI;
    } else if angle > std::f64::consts::FRAC_PI_2 {
        angle -= std::f64::consts::PI;
    }
    Ok((major, minor, angle))
}

pub fn fit_ellipse_direct(points: &[Point2]) -> Result<EllipseFit, LidarError> {
    if points.len() < 6 {
        return Err(fit_err(&format!("{} points, need at least 6", points.len())));
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(nalgebra::Vector2::zeros(), |acc, p| acc + p.coords) / n;
    let spread = (points.iter().map(|p| (p.coords - mean).norm_squared()).sum::<f64>() / (2.0 * n)).sqrt();
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(fit_err("coincident or non-finite points"));
    }
    let normalized: Vec<Point2> = points.iter().map(|p| Point2::from((p.coords - mean) / spread)).collect();
    let local = normalize_conic(solve_normalized(&normalized)?)?;
    let local_center = ellipse_center(&local)?;
    let (major, minor, angle) = axes(&local, &local_center)?;

    // undo x' = (x − m)/s: multiply by s² and expand
    let [a, b, c, d, e, f] = local;
    let (mx, my, s) = (mean.x, mean.y, spread);
    let conic = normalize_conic([
        a,
        b,
        c,
        -2.0 * a * mx - b * my + d * s,
        -b * mx - 2.0 * c * my + e * s,
        a * mx * mx + b * mx * my + c * my * my - d * s * mx - e * s * my + f * s * s,
    ])?;

    let semi_major = major * spread;
    let semi_minor = minor * spread;
    Ok(EllipseFit {
        conic,
        center: Point2::from(mean + local_center.coords * spread),
        semi_major,
        semi_minor,
        angle,
        eccentricity: (1.0 - (semi_minor / semi_major).powi(2)).max(0.0).sqrt(),
        support_count: points.len(),
    })
}

/// Hole acceptance: semi-major axis within `axis_tol` of the hole radius and
/// eccentricity below `ecc_max` (both strict).
pub fn validate_hole(e: &EllipseFit, hole_radius: f64, axis_tol: f64, ecc_max: f64) -> bool {
    (e.semi_major - hole_radius).abs() < axis_tol && e.eccentricity < ecc_max
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation2, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn ellipse_points(cx: f64, cy: f64, a: f64, b: f64, phi: f64, n: usize) -> Vec<Point2> {
        (0..n)
            .map(|k| {
                let t = TAU * k as f64 / n as f64;
                let (x, y) = (a * t.cos(), b * t.sin());
                Point2::new(cx + x * phi.cos() - y * phi.sin(), cy + x * phi.sin() + y * phi.cos())
            })
            .collect()
    }

    #[test]
    fn exact_unit_circle() {
        let fit = fit_ellipse_direct(&ellipse_points(0.0, 0.0, 1.0, 1.0, 0.0, 8)).unwrap();
        assert!(fit.center.coords.norm() < 1e-9);
        assert!((fit.semi_major - 1.0).abs() < 1e-9 && (fit.semi_minor - 1.0).abs() < 1e-9);
        assert!(fit.eccentricity < 1e-6);
        let [a, b, c, ..] = fit.conic;
        assert!((4.0 * a * c - b * b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_two_to_one_ellipse() {
        let fit = fit_ellipse_direct(&ellipse_points(0.0, 0.0, 2.0, 1.0, 0.0, 12)).unwrap();
        assert!((fit.semi_major - 2.0).abs() < 1e-9);
        assert!((fit.semi_minor - 1.0).abs() < 1e-9);
        assert!((fit.eccentricity - 3f64.sqrt() / 2.0).abs() < 1e-9);
        assert!(fit.angle.abs() < 1e-9);
    }

    #[test]
    fn too_few_or_collinear_points_fail() {
        let pts = ellipse_points(0.0, 0.0, 1.0, 1.0, 0.0, 5);
        assert!(matches!(fit_ellipse_direct(&pts), Err(LidarError::Fit(_))));
        let line: Vec<Point2> = (0..10).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(fit_ellipse_direct(&line), Err(LidarError::Fit(_))));
    }

    #[test]
    fn center_formula_cases() {
        assert_eq!(ellipse_center(&[1.0, 0.0, 1.0, 0.0, 0.0, -1.0]).unwrap(), Point2::new(0.0, 0.0));
        assert_eq!(ellipse_center(&[1.0, 0.0, 1.0, -2.0, -4.0, 4.0]).unwrap(), Point2::new(1.0, 2.0));
        assert_eq!(ellipse_center(&[1.0, 2.0, 1.0, 0.0, 0.0, -1.0]), Err(LidarError::DegenerateConic));
    }

    #[test]
    fn center_formula_matches_gradient_stationarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let (a, c) = (rng.random_range(0.5..3.0), rng.random_range(0.5..3.0));
            let b = rng.random_range(-1.0..1.0) * (4.0f64 * a * c).sqrt() * 0.9;
            let (d, e, f) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..0.0));
            // 2Ax + By + D = 0, Bx + 2Cy + E = 0
            let m = Matrix2::new(2.0 * a, b, b, 2.0 * c);
            let sol = m.lu().solve(&Vector2::new(-d, -e)).unwrap();
            let got = ellipse_center(&[a, b, c, d, e, f]).unwrap();
            assert!((got.coords - sol).norm() < 1e-10);
        }
    }

    #[test]
    fn fitted_conic_is_minimal_at_center() {
        let fit = fit_ellipse_direct(&ellipse_points(0.3, -0.2, 0.15, 0.1, 0.4, 40)).unwrap();
        let v0 = fit.evaluate(&fit.center);
        for k in 0..16 {
            let t = TAU * k as f64 / 16.0;
            let p = fit.center + Vector2::new(t.cos(), t.sin()) * 1e-3;
            assert!(fit.evaluate(&p) > v0);
        }
        assert!((fit.center - Point2::new(0.3, -0.2)).norm() < 1e-9);
    }

    #[test]
    fn validation_thresholds() {
        let mut e = fit_ellipse_direct(&ellipse_points(0.0, 0.0, 0.1, 0.1, 0.0, 30)).unwrap();
        assert!(validate_hole(&e, 0.1, 0.04, 0.6));
        e.semi_major = 0.15;
        assert!(!validate_hole(&e, 0.1, 0.04, 0.6));
        e.semi_major = 0.1;
        e.eccentricity = 0.6;
        assert!(!validate_hole(&e, 0.1, 0.04, 0.6));
    }

    #[test]
    fn dilation_keeps_center() {
        for delta in [0.0, 0.05, 0.1, 0.2] {
            let r = 0.12 * (1.0 - delta);
            let fit = fit_ellipse_direct(&ellipse_points(1.25, -0.4, r, r, 0.0, 64)).unwrap();
            assert!((fit.center - Point2::new(1.25, -0.4)).norm() < 1e-6);
        }
    }

    #[test]
    fn equivariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pts: Vec<Point2> = ellipse_points(0.2, 0.1, 0.12, 0.09, 0.3, 100)
            .into_iter()
            .map(|p| p + Vector2::new(rng.random_range(-0.002..0.002), rng.random_range(-0.002..0.002)))
            .collect();
        let base = fit_ellipse_direct(&pts).unwrap();
        for _ in 0..10 {
            let r = Rotation2::new(rng.random_range(0.0..TAU));
            let t = Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let moved: Vec<Point2> = pts.iter().map(|p| r * p + t).collect();
            let fit = fit_ellipse_direct(&moved).unwrap();
            assert!((fit.center - (r * base.center + t)).norm() < 1e-9);
            assert!((fit.semi_major - base.semi_major).abs() < 1e-9);
        }
    }
}
