//! The `calibrate`, `simulate`, `residual` and `colorize` commands.
//!
//! Each command returns a typed result for library callers and tests; the
//! binary only parses flags, prints and maps [`CommandError::exit_code`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{camera_hole_centers, load_detections, project_point, CameraError, DetectionSet};
use crate::cloud::PointCloud;
use crate::config::{load_calib_config, ConfigError, ResolvedConfig};
use crate::geometry::{Point3, RigidTransform, TransformJson};
use crate::io_util::write_atomic;
use crate::lidar::{extract_hole_centers, HoleExtraction, LidarError};
use crate::pcd::{encode_ascii, encode_binary, load_pcd, save_pcd, FieldSpec, FieldType, PcdError};
use crate::ppm::{load_ppm, PpmError};
use crate::registration::{evaluate_residual, joint_calibrate, CalibrationResult, CalibrationScene, Residuals};
use crate::sim::{generate_scene_set, Manifest, SimConfig, SimError};
use crate::target::{load_intrinsics, TargetError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Lidar,
    Camera,
    Registration,
    Simulation,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Lidar => "lidar",
            Stage::Camera => "camera",
            Stage::Registration => "registration",
            Stage::Simulation => "simulation",
        })
    }
}

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot load {path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}{stage} stage failed: {message}", scene.as_ref().map(|s| format!("scene '{s}': ")).unwrap_or_default())]
    Pipeline {
        scene: Option<String>,
        stage: Stage,
        message: String,
    },
}

impl CommandError {
    /// 1 for pipeline failures, 2 for I/O and configuration problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Pipeline { .. } => 1,
            _ => 2,
        }
    }

    fn input(path: &Path, message: impl std::fmt::Display) -> Self {
        CommandError::Input {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    fn output(path: &Path, source: std::io::Error) -> Self {
        CommandError::Output {
            path: path.to_path_buf(),
            source,
        }
    }

    fn scene(scene: &str, stage: Stage, message: impl std::fmt::Display) -> Self {
        CommandError::Pipeline {
            scene: Some(scene.to_string()),
            stage,
            message: message.to_string(),
        }
    }
}

/// Inputs of one scene after loading from disk.
#[derive(Debug, Clone)]
pub struct SceneInput {
    pub id: String,
    pub cloud: PointCloud,
    pub detections: DetectionSet,
    pub roi: crate::lidar::RoiBounds,
}

fn pcd_input(path: &Path) -> Result<PointCloud, CommandError> {
    match load_pcd(path) {
        Ok(l) => Ok(l.cloud),
        Err(PcdError::Io { source, .. }) => Err(CommandError::input(path, source)),
        Err(e) => Err(CommandError::input(path, e)),
    }
}

/// Reads every scene's cloud and detections. Paths that fail are named in
/// the error.
pub fn load_scene_inputs(config: &ResolvedConfig) -> Result<Vec<SceneInput>, CommandError> {
    config
        .scenes
        .iter()
        .map(|s| {
            let cloud = pcd_input(&s.cloud)?;
            let detections = load_detections(&s.detections).map_err(|e| match e {
                CameraError::Io { source, .. } => CommandError::input(&s.detections, source),
                other => CommandError::input(&s.detections, other),
            })?;
            Ok(SceneInput {
                id: s.id.clone(),
                cloud,
                detections,
                roi: s.roi,
            })
        })
        .collect()
}

/// Wall time per stage. `total` is measured over the three stages as one
/// span, so it also covers the scheduling gaps between them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTiming {
    pub lidar: Duration,
    pub camera: Duration,
    pub registration: Duration,
    pub total: Duration,
}

impl StageTiming {
    pub fn table(&self) -> String {
        let mut out = String::from("Runtime Breakdown (seconds)\n");
        for (name, d) in [
            ("LiDAR processing", self.lidar),
            ("Camera processing", self.camera),
            ("Registration", self.registration),
            ("Total", self.total),
        ] {
            writeln!(out, "  {name:<20} {:>9.4}", d.as_secs_f64()).expect("writing to a String");
        }
        out
    }
}

/// Per-scene products of the two sensor branches.
#[derive(Debug, Clone)]
pub struct SceneOutputs {
    pub lidar: Vec<HoleExtraction>,
    pub scenes: Vec<CalibrationScene>,
}

fn first_error<T>(ids: &[String], results: Vec<Result<T, String>>, stage: Stage) -> Result<Vec<T>, CommandError> {
    let mut out = Vec::with_capacity(results.len());
    for (id, r) in ids.iter().zip(results) {
        out.push(r.map_err(|m| CommandError::scene(id, stage, m))?);
    }
    Ok(out)
}

/// Runs the LiDAR branch over all scenes in parallel, then the camera branch.
/// When several scenes fail the first one in config order is reported.
pub fn process_scenes(
    config: &ResolvedConfig,
    inputs: &[SceneInput],
    timing: &mut StageTiming,
) -> Result<SceneOutputs, CommandError> {
    let ids: Vec<String> = inputs.iter().map(|s| s.id.clone()).collect();
    let params = config.thresholds.lidar_params();

    let t = Instant::now();
    let lidar = inputs
        .par_iter()
        .map(|s| extract_hole_centers(&s.cloud, &s.roi, &config.target, &params).map_err(|e: LidarError| e.to_string()))
        .collect();
    timing.lidar = t.elapsed();
    let lidar = first_error(&ids, lidar, Stage::Lidar)?;

    let t = Instant::now();
    let camera = inputs
        .par_iter()
        .map(|s| {
            camera_hole_centers(&s.detections.markers, &config.target, &config.intrinsics).map_err(|e| e.to_string())
        })
        .collect();
    timing.camera = t.elapsed();
    let camera = first_error(&ids, camera, Stage::Camera)?;

    let scenes = inputs
        .iter()
        .zip(&lidar)
        .zip(camera)
        .map(|((s, l), c)| CalibrationScene {
            scene_id: s.id.clone(),
            centers_lidar: l.centers(),
            centers_camera: c,
        })
        .collect();
    Ok(SceneOutputs { lidar, scenes })
}

/// Output of [`run_calibration`].
#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub result: CalibrationResult,
    pub outputs: SceneOutputs,
    pub timing: StageTiming,
}

/// Both branches plus the joint solve on already loaded inputs.
pub fn run_calibration(config: &ResolvedConfig, inputs: &[SceneInput]) -> Result<CalibrationRun, CommandError> {
    let mut timing = StageTiming::default();
    let start = Instant::now();
    let outputs = process_scenes(config, inputs, &mut timing)?;
    let t = Instant::now();
    let result = joint_calibrate(&outputs.scenes).map_err(|e| CommandError::Pipeline {
        scene: None,
        stage: Stage::Registration,
        message: e.to_string(),
    })?;
    timing.registration = t.elapsed();
    timing.total = start.elapsed();
    Ok(CalibrationRun {
        result,
        outputs,
        timing,
    })
}

/// Extrinsics file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtrinsicsJson {
    #[serde(rename = "T_CL")]
    pub t_cl: RigidTransform,
    pub rms_total_m: f64,
    pub per_scene: BTreeMap<String, f64>,
}

impl ExtrinsicsJson {
    pub fn from_result(r: &CalibrationResult) -> Self {
        Self {
            t_cl: r.t_cl,
            rms_total_m: r.residuals.rms_total,
            per_scene: r.residuals.rms_per_scene.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("extrinsics serialize");
        s.push('\n');
        s
    }
}

/// Reads `T_CL` from a calibrate output, a simulator manifest (`T_CL_true`)
/// or a bare transform object.
pub fn load_extrinsics(path: &Path) -> Result<RigidTransform, CommandError> {
    let text = std::fs::read_to_string(path).map_err(|e| CommandError::input(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CommandError::input(path, e))?;
    let node = ["T_CL", "T_CL_true"]
        .iter()
        .find_map(|k| value.get(k))
        .unwrap_or(&value);
    let j: TransformJson = serde_json::from_value(node.clone()).map_err(|e| CommandError::input(path, e))?;
    RigidTransform::try_from(j).map_err(|e| CommandError::input(path, e))
}

fn centers_cloud(points: &[Point3]) -> PointCloud {
    PointCloud::new(points.to_vec())
}

#[derive(Serialize)]
struct SceneCentersJson<'a> {
    scene_id: &'a str,
    #[serde(with = "point_list")]
    centers_lidar: &'a [Point3; 4],
    #[serde(with = "point_list")]
    centers_camera: &'a [Point3; 4],
}

mod point_list {
    use serde::Serializer;

    use crate::geometry::Point3;

    pub fn serialize<S: Serializer>(ps: &&[Point3; 4], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(ps.iter().map(|p| [p.x, p.y, p.z]))
    }
}

/// Per scene: plane inliers, edge points (lifted back to 3D) and both hole
/// center sets.
pub fn write_intermediate(dir: &Path, outputs: &SceneOutputs) -> Result<(), CommandError> {
    std::fs::create_dir_all(dir).map_err(|e| CommandError::output(dir, e))?;
    for (ex, scene) in outputs.lidar.iter().zip(&outputs.scenes) {
        let id = &scene.scene_id;
        let pcds = [
            (format!("{id}_plane_inliers.pcd"), ex.plane_inliers.clone()),
            (format!("{id}_edge_points.pcd"), PointCloud::new(ex.edge_points_3d())),
            (format!("{id}_centers_lidar.pcd"), centers_cloud(&scene.centers_lidar)),
        ];
        for (name, cloud) in pcds {
            let path = dir.join(name);
            save_pcd(&cloud, &path).map_err(|e| match e {
                PcdError::Io { source, .. } => CommandError::output(&path, source),
                other => CommandError::output(&path, std::io::Error::other(other.to_string())),
            })?;
        }
        let json = SceneCentersJson {
            scene_id: id,
            centers_lidar: &scene.centers_lidar,
            centers_camera: &scene.centers_camera,
        };
        let path = dir.join(format!("{id}_centers.json"));
        let text = serde_json::to_string_pretty(&json).expect("centers serialize");
        write_atomic(&path, text.as_bytes()).map_err(|e| CommandError::output(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct CalibrateArgs {
    pub config: PathBuf,
    pub output: PathBuf,
    pub emit_intermediate: Option<PathBuf>,
}

/// `calibrate`: load, run, write the extrinsics JSON.
pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<CalibrationRun, CommandError> {
    let config = load_calib_config(&args.config)?;
    let inputs = load_scene_inputs(&config)?;
    let run = run_calibration(&config, &inputs)?;
    let json = ExtrinsicsJson::from_result(&run.result).to_json();
    write_atomic(&args.output, json.as_bytes()).map_err(|e| CommandError::output(&args.output, e))?;
    if let Some(dir) = &args.emit_intermediate {
        write_intermediate(dir, &run.outputs)?;
    }
    Ok(run)
}

/// Human-readable summary of a calibration: `T_CL` and residuals in mm.
pub fn calibration_summary(r: &CalibrationResult) -> String {
    let mut out = String::from("T_CL (LiDAR -> camera):\n");
    for row in r.t_cl.to_row_major().chunks(4) {
        writeln!(out, "  {:>12.6} {:>12.6} {:>12.6} {:>12.6}", row[0], row[1], row[2], row[3]).unwrap();
    }
    writeln!(out, "rms_total: {:.3} mm", r.residuals.rms_total * 1e3).unwrap();
    for (id, v) in &r.residuals.rms_per_scene {
        writeln!(out, "  {id}: {:.3} mm", v * 1e3).unwrap();
    }
    out
}

/// `simulate`: writes a scene set and returns its manifest.
pub fn cmd_simulate(config_path: &Path, out_dir: &Path) -> Result<Manifest, CommandError> {
    let config = SimConfig::load(config_path).map_err(|e| match e {
        SimError::Io { source, .. } => CommandError::input(config_path, source),
        other => CommandError::input(config_path, other),
    })?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    generate_scene_set(&config, base, out_dir).map_err(|e| match e {
        SimError::Io { path, source } => CommandError::output(Path::new(&path), source),
        SimError::InvalidConfig(m) => CommandError::input(config_path, m),
        SimError::Target(t) => CommandError::Config(ConfigError::Target(t)),
        other => CommandError::Pipeline {
            scene: None,
            stage: Stage::Simulation,
            message: other.to_string(),
        },
    })
}

/// `residual`: runs both branches and evaluates a given `T_CL` without
/// fitting.
pub fn cmd_residual(extrinsics: &Path, config_path: &Path) -> Result<Residuals, CommandError> {
    let t_cl = load_extrinsics(extrinsics)?;
    let config = load_calib_config(config_path)?;
    let inputs = load_scene_inputs(&config)?;
    let outputs = process_scenes(&config, &inputs, &mut StageTiming::default())?;
    Ok(evaluate_residual(&t_cl, &outputs.scenes))
}

/// Residual table in centimeters.
pub fn residual_table(r: &Residuals) -> String {
    let mut out = String::from("Residual (in centimeters)\n");
    for (id, v) in &r.rms_per_scene {
        writeln!(out, "  {id:<16} {:>8.4}", v * 100.0).unwrap();
    }
    writeln!(out, "  {:<16} {:>8.4}", "total", r.rms_total * 100.0).unwrap();
    out
}

#[derive(Debug, Clone)]
pub struct ColorizeArgs {
    pub cloud: PathBuf,
    pub image: PathBuf,
    pub intrinsics: PathBuf,
    pub extrinsics: PathBuf,
    pub out: PathBuf,
    pub keep_unprojected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColoredCloud {
    pub points: Vec<Point3>,
    pub rgb: Vec<[u8; 3]>,
    /// Whether each point projected into the image; all true unless
    /// unprojected points were kept.
    pub projected: Vec<bool>,
}

impl ColoredCloud {
    fn columns(&self, with_flag: bool) -> (Vec<FieldSpec>, Vec<Vec<f64>>) {
        let mut fields = vec![
            FieldSpec::new("x", FieldType::Float, 8),
            FieldSpec::new("y", FieldType::Float, 8),
            FieldSpec::new("z", FieldType::Float, 8),
            FieldSpec::new("rgb", FieldType::Unsigned, 4),
        ];
        let mut cols = vec![
            self.points.iter().map(|p| p.x).collect(),
            self.points.iter().map(|p| p.y).collect(),
            self.points.iter().map(|p| p.z).collect(),
            self.rgb.iter().map(|c| f64::from(pack_rgb(*c))).collect(),
        ];
        if with_flag {
            fields.push(FieldSpec::new("projected", FieldType::Unsigned, 1));
            cols.push(self.projected.iter().map(|&b| f64::from(u8::from(b))).collect());
        }
        (fields, cols)
    }

    pub fn encode_binary(&self, with_flag: bool) -> Vec<u8> {
        let (fields, cols) = self.columns(with_flag);
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        encode_binary(&fields, &refs)
    }

    pub fn encode_ascii(&self, with_flag: bool) -> String {
        let (fields, cols) = self.columns(with_flag);
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        encode_ascii(&fields, &refs)
    }
}

/// PCL's packed color layout: `0x00RRGGBB`.
pub fn pack_rgb(c: [u8; 3]) -> u32 {
    (u32::from(c[0]) << 16) | (u32::from(c[1]) << 8) | u32::from(c[2])
}

pub fn unpack_rgb(v: u32) -> [u8; 3] {
    [(v >> 16) as u8, (v >> 8) as u8, v as u8]
}

/// Colors LiDAR points by projecting them into the image through `t_cl`
/// and the intrinsics. Points behind the camera or outside the image are
/// dropped, or kept black with `projected = false`.
pub fn colorize_cloud(
    cloud: &PointCloud,
    image: &crate::ppm::RgbImage,
    intr: &crate::target::CameraIntrinsics,
    t_cl: &RigidTransform,
    keep_unprojected: bool,
) -> ColoredCloud {
    let mut out = ColoredCloud {
        points: Vec::new(),
        rgb: Vec::new(),
        projected: Vec::new(),
    };
    for p in cloud.points() {
        let color = project_point(&t_cl.apply(p), intr).and_then(|px| image.sample(px.x, px.y));
        if color.is_some() || keep_unprojected {
            out.points.push(*p);
            out.rgb.push(color.unwrap_or([0, 0, 0]));
            out.projected.push(color.is_some());
        }
    }
    out
}

pub fn cmd_colorize(args: &ColorizeArgs) -> Result<ColoredCloud, CommandError> {
    let cloud = pcd_input(&args.cloud)?;
    let image = load_ppm(&args.image).map_err(|e| match e {
        PpmError::Io { source, .. } => CommandError::input(&args.image, source),
        other => CommandError::input(&args.image, other),
    })?;
    let intr = load_intrinsics(&args.intrinsics).map_err(|e| match e {
        TargetError::Io { source, .. } => CommandError::input(&args.intrinsics, source),
        other => CommandError::input(&args.intrinsics, other),
    })?;
    let t_cl = load_extrinsics(&args.extrinsics)?;
    let colored = colorize_cloud(&cloud, &image, &intr, &t_cl, args.keep_unprojected);
    let bytes = colored.encode_binary(args.keep_unprojected);
    write_atomic(&args.out, &bytes).map_err(|e| CommandError::output(&args.out, e))?;
    Ok(colored)
}
