use holecal::camera::{average_poses, BoardPose};
use holecal::geometry::{axis_angle_matrix, Point2, Point3, Quaternion, RigidTransform, Vec3};
use holecal::lidar::{
    align_plane_to_z0, edge_indices, euclidean_cluster, fit_ellipse_direct, ransac_plane, voxel_downsample, Plane,
    RansacParams,
};
use holecal::pcd::{encode_cloud_binary, read_pcd, table_to_cloud};
use holecal::registration::{evaluate_residual, joint_calibrate, kabsch, CalibrationScene};
use holecal::sim::synthetic_target;
use holecal::PointCloud;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| Point3::new(rng.random_range(-half..half), rng.random_range(-half..half), rng.random_range(-half..half)))
        .collect()
}

fn max_matrix_diff(a: &RigidTransform, b: &RigidTransform) -> f64 {
    (a.rotation() - b.rotation()).amax().max((a.translation() - b.translation()).amax())
}

fn ellipse_points(center: Point2, a: f64, b: f64, angle: f64, angles: &[f64]) -> Vec<Point2> {
    let (s, c) = angle.sin_cos();
    angles
        .iter()
        .map(|t| {
            let (x, y) = (a * t.cos(), b * t.sin());
            Point2::new(center.x + c * x - s * y, center.y + s * x + c * y)
        })
        .collect()
}

fn random_scenes(rng: &mut ChaCha8Rng, t: &RigidTransform, n: usize, sigma: f64) -> Vec<CalibrationScene> {
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
    let target = synthetic_target();
    (0..n)
        .map(|k| {
            let pose = RigidTransform::random(rng, 0.5)
                .compose(&RigidTransform::from_translation(Vec3::new(2.0, 0.0, 0.0)));
            let lidar = target.hole_centers_in_frame(&pose);
            let camera = lidar.map(|p| {
                let q = t.apply(&p);
                if sigma > 0.0 {
                    q + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
                } else {
                    q
                }
            });
            CalibrationScene {
                scene_id: format!("s{k}"),
                centers_lidar: lidar,
                centers_camera: camera,
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kabsch_is_conjugation_equivariant(seed in any::<u64>(), n in 4usize..40) {
        let mut r = rng(seed);
        let src = random_points(&mut r, n, 1.0);
        let t = RigidTransform::random(&mut r, 2.0);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let dst: Vec<Point3> = src
            .iter()
            .map(|p| t.apply(p) + Vec3::new(noise.sample(&mut r), noise.sample(&mut r), noise.sample(&mut r)))
            .collect();
        let gl = RigidTransform::random(&mut r, 3.0);
        let gc = RigidTransform::random(&mut r, 3.0);
        let base = kabsch(&src, &dst).unwrap();
        let moved = kabsch(
            &src.iter().map(|p| gl.apply(p)).collect::<Vec<_>>(),
            &dst.iter().map(|p| gc.apply(p)).collect::<Vec<_>>(),
        )
        .unwrap();
        let expected = gc.compose(&base.compose(&gl.inverse()));
        prop_assert!(max_matrix_diff(&moved, &expected) < 1e-9);
    }

    #[test]
    fn kabsch_returns_a_proper_rotation_for_mirrored_sets(seed in any::<u64>(), n in 4usize..20) {
        let mut r = rng(seed);
        let src = random_points(&mut r, n, 1.0);
        let dst: Vec<Point3> = src.iter().map(|p| Point3::new(-p.x, p.y, p.z)).collect();
        let t = kabsch(&src, &dst).unwrap();
        prop_assert!((t.rotation().determinant() - 1.0).abs() < 1e-9);
        let orth = t.rotation() * t.rotation().transpose() - nalgebra::Matrix3::identity();
        prop_assert!(orth.amax() < 1e-9);
    }

    #[test]
    fn ellipse_center_follows_rigid_motion(
        seed in any::<u64>(),
        a in 0.05f64..0.5,
        ratio in 0.5f64..1.0,
        angle in 0.0f64..std::f64::consts::PI,
        theta in -3.1f64..3.1,
        shift in prop::array::uniform2(-2.0f64..2.0),
    ) {
        let mut r = rng(seed);
        let params: Vec<f64> = (0..40).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
        let pts = ellipse_points(Point2::new(0.3, -0.2), a, a * ratio, angle, &params);
        let (s, c) = theta.sin_cos();
        let motion = |p: &Point2| Point2::new(c * p.x - s * p.y + shift[0], s * p.x + c * p.y + shift[1]);
        let moved: Vec<Point2> = pts.iter().map(motion).collect();
        let f0 = fit_ellipse_direct(&pts).unwrap();
        let f1 = fit_ellipse_direct(&moved).unwrap();
        prop_assert!((motion(&f0.center) - f1.center).norm() < 1e-9);
    }

    #[test]
    fn circle_center_survives_uniform_radial_dilation(
        seed in any::<u64>(),
        radius in 0.05f64..0.3,
        delta in 0.0f64..0.2,
        center in prop::array::uniform2(-1.0f64..1.0),
    ) {
        let mut r = rng(seed);
        let params: Vec<f64> = (0..30).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
        let c = Point2::new(center[0], center[1]);
        let shrunk = radius * (1.0 - delta);
        let fit = fit_ellipse_direct(&ellipse_points(c, shrunk, shrunk, 0.0, &params)).unwrap();
        prop_assert!((fit.center - c).norm() < 1e-6);
    }

    #[test]
    fn edge_classification_is_rotation_invariant(seed in any::<u64>(), theta in -3.1f64..3.1) {
        let mut r = rng(seed);
        let pts: Vec<Point2> = (0..300)
            .map(|_| Point2::new(r.random_range(-0.15..0.15), r.random_range(-0.15..0.15)))
            .collect();
        let (s, c) = theta.sin_cos();
        let rotated: Vec<Point2> = pts.iter().map(|p| Point2::new(c * p.x - s * p.y, s * p.x + c * p.y)).collect();
        prop_assert_eq!(edge_indices(&pts, 0.03, 25.0), edge_indices(&rotated, 0.03, 25.0));
    }

    #[test]
    fn lidar_stages_only_shrink(seed in any::<u64>(), n in 50usize..1500) {
        let mut r = rng(seed);
        let pts: Vec<Point2> = (0..n)
            .map(|_| Point2::new(r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)))
            .filter(|p| (p.x - 0.1).hypot(p.y) > 0.08)
            .collect();
        let voxels = voxel_downsample(&pts, 0.008);
        prop_assert!(voxels.len() <= pts.len());
        let edges = edge_indices(&voxels, 0.03, 25.0);
        prop_assert!(edges.len() <= voxels.len());
        prop_assert!(edges.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(edges.last().is_none_or(|&i| i < voxels.len()));
        let edge_pts: Vec<Point2> = edges.iter().map(|&i| voxels[i]).collect();
        let clusters = euclidean_cluster(&edge_pts, 0.02, 15);
        let mut seen = vec![false; edge_pts.len()];
        for cluster in &clusters {
            prop_assert!(cluster.len() >= 15);
            for &i in cluster {
                prop_assert!(i < edge_pts.len() && !seen[i]);
                seen[i] = true;
            }
        }
    }

    #[test]
    fn hole_centers_follow_frame_changes(seed in any::<u64>()) {
        let mut r = rng(seed);
        let target = synthetic_target();
        let t = RigidTransform::random(&mut r, 3.0);
        let g = RigidTransform::random(&mut r, 3.0);
        let direct = target.hole_centers_in_frame(&g.compose(&t));
        let mapped = target.hole_centers_in_frame(&t).map(|p| g.apply(&p));
        for (a, b) in direct.iter().zip(&mapped) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn averaging_copies_returns_the_pose(seed in any::<u64>(), n in 1usize..8) {
        let mut r = rng(seed);
        let pose = BoardPose { t_cam_board: RigidTransform::random(&mut r, 3.0), reproj_rms: 0.2 };
        let avg = average_poses(&vec![pose.clone(); n]).unwrap();
        prop_assert!(max_matrix_diff(&avg.t_cam_board, &pose.t_cam_board) < 1e-12);
    }

    #[test]
    fn quaternion_round_trip(seed in any::<u64>()) {
        let t = RigidTransform::random(&mut rng(seed), 1.0);
        let q = Quaternion::from_rotation(t.rotation());
        prop_assert!(q.w >= 0.0);
        prop_assert!((q.to_rotation() - t.rotation()).amax() < 1e-9);
    }

    #[test]
    fn binary_pcd_round_trips_exactly(seed in any::<u64>(), n in 0usize..500) {
        let mut r = rng(seed);
        let cloud = PointCloud::new(random_points(&mut r, n, 50.0));
        let table = read_pcd(encode_cloud_binary(&cloud).as_slice()).unwrap();
        let back = table_to_cloud(&table).unwrap();
        prop_assert_eq!(back.dropped, 0);
        prop_assert_eq!(back.cloud.points(), cloud.points());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ransac_is_deterministic_and_lift_inverts_flatten(
        seed in any::<u64>(),
        normal in prop::array::uniform3(-1.0f64..1.0),
        offset in 1.0f64..4.0,
    ) {
        let n = Vec3::from(normal);
        prop_assume!(n.norm() > 0.2);
        let n = n.normalize();
        let plane = Plane { normal: n, d: -offset };
        let mut r = rng(seed);
        let u = n.cross(&if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() }).normalize();
        let v = n.cross(&u);
        let noise = Normal::new(0.0, 0.003).unwrap();
        let mut pts: Vec<Point3> = (0..800)
            .map(|_| {
                let (a, b) = (r.random_range(-0.6..0.6), r.random_range(-0.6..0.6));
                Point3::from(n * offset + u * a + v * b + n * noise.sample(&mut r))
            })
            .collect();
        pts.extend(random_points(&mut r, 100, 3.0));
        let cloud = PointCloud::new(pts);
        let params = RansacParams { seed, ..RansacParams::default() };
        let (p1, in1) = ransac_plane(&cloud, &params).unwrap();
        let (p2, in2) = ransac_plane(&cloud, &params).unwrap();
        prop_assert_eq!(p1, p2);
        prop_assert_eq!(in1.points(), in2.points());
        prop_assert!(p1.normal.dot(&plane.normal).abs() > 0.999);

        let aligned = align_plane_to_z0(&p1, &in1);
        for (p, q) in in1.points().iter().zip(&aligned.points2d) {
            prop_assert!((aligned.lift_point(q) - p).norm() <= params.inlier_threshold + 1e-9);
        }
    }

    #[test]
    fn joint_solution_beats_perturbations(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let truth = RigidTransform::random(&mut r, 0.3);
        let scenes = random_scenes(&mut r, &truth, n, 0.004);
        let result = joint_calibrate(&scenes).unwrap();
        let per_point = &result.residuals.per_point;
        let sum_sq: f64 = per_point.iter().map(|e| e * e).sum();
        prop_assert_eq!(per_point.len(), 4 * n);
        prop_assert!((result.rms_total().powi(2) * (4 * n) as f64 - sum_sq).abs() < 1e-12);
        for _ in 0..50 {
            let axis = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            let angle = r.random_range(0.0..5f64.to_radians());
            let shift = Vec3::new(r.random_range(-0.05..0.05), r.random_range(-0.05..0.05), r.random_range(-0.05..0.05));
            let delta = RigidTransform::new(axis_angle_matrix(&axis, angle), shift).unwrap();
            let other = evaluate_residual(&delta.compose(&result.t_cl), &scenes);
            prop_assert!(result.rms_total() <= other.rms_total + 1e-15);
        }
    }

    #[test]
    fn consistent_scenes_calibrate_exactly(seed in any::<u64>(), n in 1usize..10) {
        let mut r = rng(seed);
        let truth = RigidTransform::random(&mut r, 0.3);
        let scenes = random_scenes(&mut r, &truth, n, 0.0);
        let result = joint_calibrate(&scenes).unwrap();
        prop_assert!(result.rms_total() <= 1e-10);
        prop_assert!(max_matrix_diff(&result.t_cl, &truth) < 1e-9);
    }
}
