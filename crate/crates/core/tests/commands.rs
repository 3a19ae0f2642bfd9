use std::path::{Path, PathBuf};

use holecal::commands::{
    cmd_calibrate, cmd_colorize, cmd_residual, cmd_simulate, load_extrinsics, unpack_rgb, CalibrateArgs, ColorizeArgs,
};
use holecal::geometry::Point3;
use holecal::pcd::{load_pcd, read_pcd};
use holecal::ppm::RgbImage;
use holecal::sim::{load_manifest, Manifest, MANIFEST_FILE};
use holecal::target::CameraIntrinsics;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simulate(dir: &Path, config: &str) -> Manifest {
    let cfg = dir.join("sim.json");
    std::fs::write(&cfg, config).unwrap();
    cmd_simulate(&cfg, &dir.join("set")).unwrap()
}

fn calib_path(dir: &Path, m: &Manifest) -> PathBuf {
    dir.join("set").join(&m.calib_config)
}

#[test]
fn residual_of_own_output_matches_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let m = simulate(dir.path(), r#"{"seed": 2}"#);
    let out = dir.path().join("ext.json");
    let run = cmd_calibrate(&CalibrateArgs {
        config: calib_path(dir.path(), &m),
        output: out.clone(),
        emit_intermediate: None,
    })
    .unwrap();
    let res = cmd_residual(&out, &calib_path(dir.path(), &m)).unwrap();
    assert!((res.rms_total - run.result.rms_total()).abs() < 1e-12);
    for (id, v) in &run.result.residuals.rms_per_scene {
        assert!((res.rms_per_scene[id] - v).abs() < 1e-12);
    }
    assert_eq!(load_extrinsics(&out).unwrap(), run.result.t_cl);
}

#[test]
fn ground_truth_extrinsic_is_no_worse_than_calibrated_plus_a_millimeter() {
    let dir = tempfile::tempdir().unwrap();
    let m = simulate(
        dir.path(),
        r#"{"seed": 8, "noise": {"range_sigma": 0.003, "dilation_depth": 0.01}, "corner_noise_px": 0.3}"#,
    );
    let calib = calib_path(dir.path(), &m);
    let out = dir.path().join("ext.json");
    let run = cmd_calibrate(&CalibrateArgs {
        config: calib.clone(),
        output: out,
        emit_intermediate: None,
    })
    .unwrap();
    let truth = cmd_residual(&dir.path().join("set").join(MANIFEST_FILE), &calib).unwrap();
    assert!(truth.rms_total >= run.result.rms_total() - 1e-12);
    assert!(truth.rms_total <= run.result.rms_total() + 1e-3, "{} vs {}", truth.rms_total, run.result.rms_total());
    assert!(run.result.rms_total() < 6.5e-3);
}

#[test]
fn stage_timing_partitions_total() {
    let dir = tempfile::tempdir().unwrap();
    let m = simulate(dir.path(), r#"{"seed": 3}"#);
    let run = cmd_calibrate(&CalibrateArgs {
        config: calib_path(dir.path(), &m),
        output: dir.path().join("ext.json"),
        emit_intermediate: None,
    })
    .unwrap();
    let t = run.timing;
    let sum = (t.lidar + t.camera + t.registration).as_secs_f64();
    assert!((t.total.as_secs_f64() - sum).abs() < 0.05 * t.total.as_secs_f64());
}

#[test]
fn intermediate_outputs_per_scene() {
    let dir = tempfile::tempdir().unwrap();
    let m = simulate(dir.path(), r#"{"seed": 4, "n_scenes": 2}"#);
    let inter = dir.path().join("inter");
    let run = cmd_calibrate(&CalibrateArgs {
        config: calib_path(dir.path(), &m),
        output: dir.path().join("ext.json"),
        emit_intermediate: Some(inter.clone()),
    })
    .unwrap();
    for (scene, ex) in run.outputs.scenes.iter().zip(&run.outputs.lidar) {
        let id = &scene.scene_id;
        let inliers = load_pcd(&inter.join(format!("{id}_plane_inliers.pcd"))).unwrap().cloud;
        assert_eq!(inliers.len(), ex.plane_inliers.len());
        let edges = load_pcd(&inter.join(format!("{id}_edge_points.pcd"))).unwrap().cloud;
        assert_eq!(edges.len(), ex.edge_points.len());
        let centers = load_pcd(&inter.join(format!("{id}_centers_lidar.pcd"))).unwrap().cloud;
        assert_eq!(centers.points(), scene.centers_lidar.as_slice());
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(inter.join(format!("{id}_centers.json"))).unwrap()).unwrap();
        assert_eq!(json["scene_id"], id.as_str());
        assert_eq!(json["centers_camera"].as_array().unwrap().len(), 4);
    }
}

/// Pinhole plus radial-tangential distortion, written out independently of
/// the library's projection.
fn oracle_pixel(p: &Point3, k: &CameraIntrinsics) -> Option<(f64, f64)> {
    if p.z <= 0.0 {
        return None;
    }
    let (x, y) = (p.x / p.z, p.y / p.z);
    let [k1, k2, p1, p2, k3] = k.distortion;
    let r2 = x * x + y * y;
    let r4 = r2 * r2;
    let radial = 1.0 + k1 * r2 + k2 * r4 + k3 * r4 * r2;
    let xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
    let yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
    Some((k.fx * xd + k.cx, k.fy * yd + k.cy))
}

fn checker(col: usize, row: usize) -> [u8; 3] {
    if (col / 40 + row / 40) % 2 == 0 {
        [250, 30, (col % 256) as u8]
    } else {
        [10, 220, (row % 256) as u8]
    }
}

#[test]
fn colorized_points_match_forward_projection() {
    let dir = tempfile::tempdir().unwrap();
    let m = simulate(dir.path(), r#"{"seed": 5, "n_scenes": 1, "pcd_encoding": "ascii"}"#);
    let set = dir.path().join("set");
    let intr_path = set.join(&m.intrinsics);
    let intr = holecal::target::load_intrinsics(&intr_path).unwrap();
    let (w, h) = (1920, 1200);
    let mut image = RgbImage::filled(w, h, [0, 0, 0]);
    for r in 0..h {
        for c in 0..w {
            image.pixels[r * w + c] = checker(c, r);
        }
    }
    let image_path = dir.path().join("checker.ppm");
    std::fs::write(&image_path, image.encode_p6()).unwrap();
    let out = dir.path().join("colored.pcd");
    let colored = cmd_colorize(&ColorizeArgs {
        cloud: set.join(&m.scenes[0].cloud),
        image: image_path,
        intrinsics: intr_path,
        extrinsics: set.join(MANIFEST_FILE),
        out: out.clone(),
        keep_unprojected: false,
    })
    .unwrap();
    assert!(colored.points.len() > 1000);

    let table = read_pcd(std::fs::File::open(&out).unwrap()).unwrap();
    let rgb = table.column("rgb").unwrap();
    let xs = table.column("x").unwrap();
    let ys = table.column("y").unwrap();
    let zs = table.column("z").unwrap();
    assert_eq!(rgb.len(), colored.points.len());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    while checked < 100 {
        let i = rng.random_range(0..rgb.len());
        let p = Point3::new(xs[i], ys[i], zs[i]);
        let (u, v) = oracle_pixel(&m.t_cl_true.apply(&p), &intr).expect("kept points are in front");
        // skip points within rounding distance of a pixel border
        let near_border = |t: f64| ((t + 0.5) - (t + 0.5).round()).abs() < 1e-6;
        if near_border(u) || near_border(v) {
            continue;
        }
        let (c, r) = ((u + 0.5).floor() as usize, (v + 0.5).floor() as usize);
        assert_eq!(unpack_rgb(rgb[i] as u32), checker(c, r), "point {i} at ({u}, {v})");
        checked += 1;
    }
}

#[test]
fn simulate_reproduces_bytes_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    std::fs::write(&cfg, r#"{"seed": 1, "n_scenes": 4}"#).unwrap();
    let a = cmd_simulate(&cfg, &dir.path().join("a")).unwrap();
    let b = cmd_simulate(&cfg, &dir.path().join("b")).unwrap();
    assert_eq!(a.scenes.len(), 4);
    let reread = load_manifest(&dir.path().join("a").join(MANIFEST_FILE)).unwrap();
    assert_eq!(reread.scenes.len(), 4);
    for entry in std::fs::read_dir(dir.path().join("a")).unwrap() {
        let name = entry.unwrap().file_name();
        let x = std::fs::read(dir.path().join("a").join(&name)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(x, y, "{name:?}");
    }
    assert_eq!(a.t_cl_true, b.t_cl_true);
}

#[test]
fn shipped_example_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let target = holecal::target::load_target_config(&dir.join("synthetic_target.json")).unwrap();
    assert_eq!(target.hole_centers_board().len(), 4);
    holecal::target::load_intrinsics(&dir.join("synthetic_intrinsics.json")).unwrap();
    for name in ["simulate_uniform.json", "simulate_mechanical16.json"] {
        let cfg = holecal::sim::SimConfig::load(&dir.join(name)).unwrap();
        assert_eq!(cfg.n_scenes, 4, "{name}");
    }
}
