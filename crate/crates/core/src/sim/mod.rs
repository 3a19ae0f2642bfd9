//! Synthetic calibration scenes with ground truth.
//!
//! The LiDAR side casts the rays of a [`ScanPattern`] against the board (a
//! rectangle with the target's holes cut out) and an optional background
//! plane behind it. Edge dilation is modeled as spot spread: a ray landing
//! within `dilation_depth` inside a hole rim still returns from the board, so
//! holes appear shrunk by that amount. The camera side projects the marker
//! corners through the intrinsics and distortion model.

mod pattern;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pattern::{az_el, direction, ScanPattern};

use crate::camera::{project_point, DetectionSet, MarkerDetection};
use crate::cloud::PointCloud;
use crate::config::{CalibConfig, SceneEntry, Source, Thresholds};
use crate::geometry::{axis_angle_matrix, Point2, Point3, RigidTransform, Vec3};
use crate::io_util::write_atomic;
use crate::lidar::RoiBounds;
use crate::pcd::{encode_cloud_ascii, encode_cloud_binary};
use crate::target::{load_intrinsics, load_target_config, CameraIntrinsics, MarkerSpec, TargetGeometry};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("board not visible to the LiDAR: {0}")]
    NoVisibility(String),
    #[error("marker corners out of view: {0}")]
    OutOfView(String),
    #[error("no valid board pose after {attempts} attempts")]
    PoseSamplingExhausted { attempts: usize },
    #[error("ground truth inconsistent: {0}")]
    Consistency(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Target(#[from] crate::target::TargetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoise {
    /// Gaussian range noise along the ray, meters.
    pub range_sigma: f64,
    /// Depth of the inward hole-rim fill caused by spot spread, meters.
    pub dilation_depth: f64,
    pub dropout_prob: f64,
}

impl SensorNoise {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.range_sigma >= 0.0
            && self.range_sigma.is_finite()
            && self.dilation_depth >= 0.0
            && self.dilation_depth.is_finite()
            && (0.0..=1.0).contains(&self.dropout_prob);
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!("invalid sensor noise {self:?}")))
        }
    }
}

/// Board margin around each hole rim that must lie inside the LiDAR coverage.
pub const HOLE_VIEW_MARGIN: f64 = 0.06;

/// Physical board for simulation: the target layout plus the outline.
#[derive(Debug, Clone, PartialEq)]
pub struct SimBoard {
    pub target: TargetGeometry,
    pub width: f64,
    pub height: f64,
    /// Distance of a background plane behind the board, parallel to it.
    pub background_offset: Option<f64>,
    /// Holes treated as solid (occluded), by correspondence index.
    pub covered_holes: Vec<usize>,
}

impl SimBoard {
    pub fn new(target: TargetGeometry, width: f64, height: f64) -> Self {
        Self {
            target,
            width,
            height,
            background_offset: Some(1.5),
            covered_holes: Vec::new(),
        }
    }

    pub fn synthetic() -> Self {
        Self::new(synthetic_target(), 1.2, 0.9)
    }

    /// Board corners in the board frame, top-left first, clockwise.
    pub fn outline(&self) -> [Point3; 4] {
        let (w, h) = (self.width / 2.0, self.height / 2.0);
        [
            Point3::new(-w, h, 0.0),
            Point3::new(w, h, 0.0),
            Point3::new(w, -h, 0.0),
            Point3::new(-w, -h, 0.0),
        ]
    }

    /// Points on circles of radius `hole_radius + HOLE_VIEW_MARGIN` around
    /// each hole: the part of the board the LiDAR must see for the edge
    /// test to close a ring around every hole.
    pub fn hole_surroundings(&self) -> Vec<Point3> {
        let r = self.target.hole_radius() + HOLE_VIEW_MARGIN;
        self.target
            .hole_centers_board()
            .iter()
            .flat_map(|c| {
                (0..16).map(move |k| {
                    let t = std::f64::consts::TAU * k as f64 / 16.0;
                    Point3::new(c.x + r * t.cos(), c.y + r * t.sin(), c.z)
                })
            })
            .collect()
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(SimError::InvalidConfig("board size must be positive".into()));
        }
        let (w, h, r) = (self.width / 2.0, self.height / 2.0, self.target.hole_radius());
        for c in self.target.hole_centers_board() {
            if c.x.abs() + r > w || c.y.abs() + r > h {
                return Err(SimError::InvalidConfig("a hole extends past the board outline".into()));
            }
        }
        if self.covered_holes.iter().any(|&i| i >= 4) {
            return Err(SimError::InvalidConfig("covered hole index out of range".into()));
        }
        Ok(())
    }
}

/// Layout used by the generated datasets: 1.2 × 0.9 m board, holes of
/// radius 0.1 m, 0.2 m markers near the corners.
pub fn synthetic_target() -> TargetGeometry {
    let markers = [(-0.48, 0.33), (0.48, 0.33), (0.48, -0.33), (-0.48, -0.33)]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| MarkerSpec {
            id: i as i64,
            center_board: Point3::new(x, y, 0.0),
            side_length: 0.2,
        })
        .collect();
    TargetGeometry::new(
        0.1,
        vec![
            Point3::new(-0.25, 0.18, 0.0),
            Point3::new(0.25, 0.18, 0.0),
            Point3::new(0.25, -0.18, 0.0),
            Point3::new(-0.25, -0.18, 0.0),
        ],
        markers,
    )
    .expect("synthetic target is valid")
}

pub fn synthetic_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 1300.0,
        fy: 1300.0,
        cx: 960.0,
        cy: 600.0,
        distortion: [-0.08, 0.02, 0.0003, -0.0002, 0.0],
    }
}

/// Camera looking along LiDAR `+x`, slightly rotated and offset.
pub fn nominal_t_cl() -> RigidTransform {
    let base = nalgebra::Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    RigidTransform::new(base, Vec3::new(0.05, -0.08, 0.02)).expect("permutation matrix is a rotation")
}

fn perturbed_t_cl<R: Rng + ?Sized>(rng: &mut R) -> RigidTransform {
    let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let angle = rng.random_range(0.0..3f64.to_radians());
    let jitter = RigidTransform::from_axis_angle(
        &axis,
        angle,
        Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)),
    );
    jitter.compose(&nominal_t_cl())
}

enum Hit {
    Board(f64),
    Background(f64),
    Miss,
}

fn cast(board: &SimBoard, pose: &RigidTransform, inverse: &RigidTransform, normal: &Vec3, d: &Vec3, dilation: f64) -> Hit {
    let origin = pose.translation();
    let denom = normal.dot(d);
    let background = |n: &Vec3| match board.background_offset {
        Some(off) if denom < 0.0 => {
            let s = n.dot(&(origin - n * off)) / denom;
            if s > 0.0 {
                Hit::Background(s)
            } else {
                Hit::Miss
            }
        }
        _ => Hit::Miss,
    };
    if denom >= 0.0 {
        return Hit::Miss;
    }
    let s = normal.dot(origin) / denom;
    if s <= 0.0 {
        return background(normal);
    }
    let local = inverse.apply(&Point3::from(d * s));
    if local.x.abs() > board.width / 2.0 || local.y.abs() > board.height / 2.0 {
        return background(normal);
    }
    let r = board.target.hole_radius();
    let through_hole = board
        .target
        .hole_centers_board()
        .iter()
        .enumerate()
        .filter(|(i, _)| !board.covered_holes.contains(i))
        .any(|(_, c)| Point2::new(local.x - c.x, local.y - c.y).coords.norm() < r - dilation);
    if through_hole {
        background(normal)
    } else {
        Hit::Board(s)
    }
}

/// Casts every ray of `pattern` from the LiDAR origin. Points carry range
/// noise along their ray; each ray is independently dropped with
/// `dropout_prob`.
pub fn simulate_lidar_scan(
    board: &SimBoard,
    board_pose_lidar: &RigidTransform,
    pattern: &ScanPattern,
    noise: &SensorNoise,
    seed: u64,
) -> Result<PointCloud, SimError> {
    board.validate()?;
    pattern.validate()?;
    noise.validate()?;
    let normal = board_pose_lidar.apply_vector(&Vec3::z());
    let center = board_pose_lidar.translation();
    if normal.dot(&-center) <= 0.0 {
        return Err(SimError::NoVisibility("board faces away from the sensor".into()));
    }
    let covered = board
        .outline()
        .iter()
        .chain(std::iter::once(&Point3::origin()))
        .any(|p| pattern.covers(&board_pose_lidar.apply(p).coords));
    if !covered {
        return Err(SimError::NoVisibility("board outside the pattern coverage".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = pattern.directions(&mut rng);
    let range_noise = Normal::new(0.0, noise.range_sigma).expect("sigma validated");
    let inverse = board_pose_lidar.inverse();
    let mut points = Vec::with_capacity(dirs.len());
    for d in &dirs {
        if noise.dropout_prob > 0.0 && rng.random::<f64>() < noise.dropout_prob {
            continue;
        }
        let range = match cast(board, board_pose_lidar, &inverse, &normal, d, noise.dilation_depth) {
            Hit::Board(s) | Hit::Background(s) => s,
            Hit::Miss => continue,
        };
        let eps = if noise.range_sigma > 0.0 { range_noise.sample(&mut rng) } else { 0.0 };
        points.push(Point3::from(d * (range + eps)));
    }
    Ok(PointCloud::new(points))
}

/// Projects every marker's corners into the image and adds Gaussian pixel
/// noise. Fails if any noiseless corner leaves the image.
pub fn simulate_marker_detections(
    target: &TargetGeometry,
    board_pose_camera: &RigidTransform,
    intr: &CameraIntrinsics,
    image_size: [u32; 2],
    corner_noise_px: f64,
    seed: u64,
) -> Result<Vec<MarkerDetection>, SimError> {
    if !(corner_noise_px >= 0.0 && corner_noise_px.is_finite()) {
        return Err(SimError::InvalidConfig("corner noise must be non-negative".into()));
    }
    let noise = Normal::new(0.0, corner_noise_px).expect("sigma validated");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (image_size[0] as f64, image_size[1] as f64);
    let mut out = Vec::with_capacity(target.markers().len());
    for m in target.markers() {
        let mut corners = [Point2::origin(); 4];
        for (slot, c) in corners.iter_mut().zip(m.corners_board()) {
            let p = project_point(&board_pose_camera.apply(&c), intr)
                .ok_or_else(|| SimError::OutOfView(format!("marker {} behind the camera", m.id)))?;
            if !(0.0..w).contains(&p.x) || !(0.0..h).contains(&p.y) {
                return Err(SimError::OutOfView(format!("marker {} corner at ({:.1}, {:.1})", m.id, p.x, p.y)));
            }
            *slot = p;
        }
        if corner_noise_px > 0.0 {
            for c in &mut corners {
                c.x += noise.sample(&mut rng);
                c.y += noise.sample(&mut rng);
            }
        }
        out.push(MarkerDetection {
            id: m.id,
            corners_px: corners,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "T_CL_true")]
    pub t_cl_true: RigidTransform,
    pub board_pose_lidar: RigidTransform,
    pub board_pose_camera: RigidTransform,
    #[serde(with = "point_list")]
    pub hole_centers_lidar: [Point3; 4],
    #[serde(with = "point_list")]
    pub hole_centers_camera: [Point3; 4],
}

mod point_list {
    use super::Point3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ps: &[Point3; 4], s: S) -> Result<S::Ok, S::Error> {
        ps.map(|p| [p.x, p.y, p.z]).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[Point3; 4], D::Error> {
        Ok(<[[f64; 3]; 4]>::deserialize(d)?.map(Point3::from))
    }
}

impl GroundTruth {
    pub fn new(target: &TargetGeometry, t_cl_true: RigidTransform, board_pose_lidar: RigidTransform) -> Self {
        let board_pose_camera = t_cl_true.compose(&board_pose_lidar);
        Self {
            t_cl_true,
            board_pose_lidar,
            board_pose_camera,
            hole_centers_lidar: target.hole_centers_in_frame(&board_pose_lidar),
            hole_centers_camera: target.hole_centers_in_frame(&board_pose_camera),
        }
    }

    pub fn check(&self) -> Result<(), SimError> {
        let composed = self.t_cl_true.compose(&self.board_pose_lidar);
        let dm = (composed.to_homogeneous() - self.board_pose_camera.to_homogeneous()).amax();
        if dm > 1e-12 {
            return Err(SimError::Consistency(format!("board poses differ by {dm:e}")));
        }
        for (l, c) in self.hole_centers_lidar.iter().zip(&self.hole_centers_camera) {
            let d = (self.t_cl_true.apply(l) - c).norm();
            if d > 1e-12 {
                return Err(SimError::Consistency(format!("hole centers differ by {d:e}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseSampler {
    /// Board distance along LiDAR `+x`, meters.
    pub range_m: [f64; 2],
    pub lateral_y_m: f64,
    pub lateral_z_m: f64,
    /// Yaw and pitch away from facing the sensor, each bounded by this.
    pub max_tilt_deg: f64,
    /// In-plane roll bound.
    pub max_roll_deg: f64,
    pub max_attempts: usize,
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self {
            range_m: [2.0, 2.6],
            lateral_y_m: 0.15,
            lateral_z_m: 0.08,
            max_tilt_deg: 25.0,
            max_roll_deg: 10.0,
            max_attempts: 1000,
        }
    }
}

/// Board orientation facing the LiDAR upright: board `+x` → LiDAR `−y`,
/// `+y` → `+z`, `+z` → `−x`.
pub fn facing_rotation() -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::from_columns(&[-Vec3::y(), Vec3::z(), -Vec3::x()])
}

/// Everything needed to check whether a candidate board pose is usable.
pub struct Visibility<'a> {
    pub board: &'a SimBoard,
    pub pattern: &'a ScanPattern,
    pub t_cl: &'a RigidTransform,
    pub intrinsics: &'a CameraIntrinsics,
    pub image_size: [u32; 2],
}

impl Visibility<'_> {
    pub fn accepts(&self, pose: &RigidTransform) -> bool {
        let lidar_ok = self
            .board
            .hole_surroundings()
            .iter()
            .all(|c| self.pattern.covers(&pose.apply(c).coords));
        let cam = self.t_cl.compose(pose);
        let faces_camera = cam.apply_vector(&Vec3::z()).dot(&-cam.translation()) > 0.0;
        lidar_ok
            && faces_camera
            && simulate_marker_detections(&self.board.target, &cam, self.intrinsics, self.image_size, 0.0, 0).is_ok()
    }
}

impl PoseSampler {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.range_m[0] > 0.0
            && self.range_m[0] <= self.range_m[1]
            && self.lateral_y_m >= 0.0
            && self.lateral_z_m >= 0.0
            && (0.0..90.0).contains(&self.max_tilt_deg)
            && (0.0..90.0).contains(&self.max_roll_deg)
            && self.max_attempts > 0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!("invalid pose sampler {self:?}")))
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> RigidTransform {
        let sym = |rng: &mut R, b: f64| if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 };
        let tilt = self.max_tilt_deg.to_radians();
        let yaw = axis_angle_matrix(&Vec3::z(), sym(rng, tilt));
        let pitch = axis_angle_matrix(&Vec3::y(), sym(rng, tilt));
        let roll = axis_angle_matrix(&Vec3::z(), sym(rng, self.max_roll_deg.to_radians()));
        let rotation = yaw * pitch * facing_rotation() * roll;
        let x = if self.range_m[1] > self.range_m[0] {
            rng.random_range(self.range_m[0]..=self.range_m[1])
        } else {
            self.range_m[0]
        };
        let t = Vec3::new(x, sym(rng, self.lateral_y_m), sym(rng, self.lateral_z_m));
        RigidTransform::new(rotation, t).expect("product of rotations")
    }

    /// Draws board poses until one passes `visibility`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, visibility: &Visibility) -> Result<RigidTransform, SimError> {
        for _ in 0..self.max_attempts {
            let pose = self.draw(rng);
            if visibility.accepts(&pose) {
                return Ok(pose);
            }
        }
        Err(SimError::PoseSamplingExhausted {
            attempts: self.max_attempts,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcdEncoding {
    Ascii,
    #[default]
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub n_scenes: usize,
    /// Defaults to [`synthetic_target`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<Source<TargetGeometry>>,
    pub board_size_m: [f64; 2],
    /// Defaults to [`synthetic_intrinsics`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Source<CameraIntrinsics>>,
    pub image_size: [u32; 2],
    pub pattern: ScanPattern,
    pub noise: SensorNoise,
    pub corner_noise_px: f64,
    pub background_offset_m: Option<f64>,
    pub covered_holes: Vec<usize>,
    /// Sampled near [`nominal_t_cl`] from the seed when absent.
    #[serde(rename = "T_CL_true", skip_serializing_if = "Option::is_none")]
    pub t_cl_true: Option<RigidTransform>,
    pub pose_sampler: PoseSampler,
    /// Margin of the per-scene ROI box around the board outline, meters.
    pub roi_margin_m: f64,
    pub pcd_encoding: PcdEncoding,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_scenes: 4,
            target: None,
            board_size_m: [1.2, 0.9],
            intrinsics: None,
            image_size: [1920, 1200],
            pattern: ScanPattern::uniform(100_000),
            noise: SensorNoise::default(),
            corner_noise_px: 0.0,
            background_offset_m: Some(1.5),
            covered_holes: Vec::new(),
            t_cl_true: None,
            pose_sampler: PoseSampler::default(),
            roi_margin_m: 0.25,
            pcd_encoding: PcdEncoding::Binary,
        }
    }
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedScene {
    pub id: String,
    pub cloud: PointCloud,
    pub detections: DetectionSet,
    pub ground_truth: GroundTruth,
    pub roi: RoiBounds,
}

#[derive(Debug, Clone)]
pub struct SimulatedSet {
    pub t_cl_true: RigidTransform,
    pub target: TargetGeometry,
    pub intrinsics: CameraIntrinsics,
    pub scenes: Vec<SimulatedScene>,
}

fn roi_around(points: &[Point3], margin: f64) -> RoiBounds {
    let lo = points.iter().fold(Vec3::repeat(f64::INFINITY), |a, p| a.inf(&p.coords));
    let hi = points.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |a, p| a.sup(&p.coords));
    RoiBounds {
        x_min: lo.x - margin,
        x_max: hi.x + margin,
        y_min: lo.y - margin,
        y_max: hi.y + margin,
        z_min: lo.z - margin,
        z_max: hi.z + margin,
    }
}

fn union(a: &RoiBounds, b: &RoiBounds) -> RoiBounds {
    RoiBounds {
        x_min: a.x_min.min(b.x_min),
        x_max: a.x_max.max(b.x_max),
        y_min: a.y_min.min(b.y_min),
        y_max: a.y_max.max(b.y_max),
        z_min: a.z_min.min(b.z_min),
        z_max: a.z_max.max(b.z_max),
    }
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:03}")
}

/// Builds every scene in memory. Paths in `config` resolve against `base_dir`.
pub fn simulate_scene_set(config: &SimConfig, base_dir: &Path) -> Result<SimulatedSet, SimError> {
    if config.n_scenes == 0 {
        return Err(SimError::InvalidConfig("n_scenes must be at least 1".into()));
    }
    if !(config.roi_margin_m >= 0.0) {
        return Err(SimError::InvalidConfig("roi_margin_m must be non-negative".into()));
    }
    config.pose_sampler.validate()?;
    config.pattern.validate()?;
    config.noise.validate()?;
    let target = match &config.target {
        None => synthetic_target(),
        Some(Source::Path(p)) => load_target_config(&base_dir.join(p))?,
        Some(Source::Inline(t)) => t.clone(),
    };
    let intrinsics = match &config.intrinsics {
        None => synthetic_intrinsics(),
        Some(Source::Path(p)) => load_intrinsics(&base_dir.join(p))?,
        Some(Source::Inline(k)) => {
            k.validate()?;
            *k
        }
    };
    let board = SimBoard {
        target: target.clone(),
        width: config.board_size_m[0],
        height: config.board_size_m[1],
        background_offset: config.background_offset_m,
        covered_holes: config.covered_holes.clone(),
    };
    board.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let t_cl_true = match config.t_cl_true {
        Some(t) => t,
        None => perturbed_t_cl(&mut rng),
    };
    let visibility = Visibility {
        board: &board,
        pattern: &config.pattern,
        t_cl: &t_cl_true,
        intrinsics: &intrinsics,
        image_size: config.image_size,
    };
    let mut plans = Vec::with_capacity(config.n_scenes);
    for _ in 0..config.n_scenes {
        let pose = config.pose_sampler.sample(&mut rng, &visibility)?;
        plans.push((pose, rng.random::<u64>(), rng.random::<u64>()));
    }

    let scenes = plans
        .par_iter()
        .enumerate()
        .map(|(i, &(pose, lidar_seed, camera_seed))| {
            let ground_truth = GroundTruth::new(&target, t_cl_true, pose);
            ground_truth.check()?;
            let cloud = simulate_lidar_scan(&board, &pose, &config.pattern, &config.noise, lidar_seed)?;
            let markers = simulate_marker_detections(
                &target,
                &ground_truth.board_pose_camera,
                &intrinsics,
                config.image_size,
                config.corner_noise_px,
                camera_seed,
            )?;
            let outline: Vec<Point3> = board.outline().iter().map(|c| pose.apply(c)).collect();
            Ok(SimulatedScene {
                id: scene_id(i),
                cloud,
                detections: DetectionSet {
                    image_size: config.image_size,
                    markers,
                },
                ground_truth,
                roi: roi_around(&outline, config.roi_margin_m),
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(SimulatedSet {
        t_cl_true,
        target,
        intrinsics,
        scenes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestScene {
    pub id: String,
    pub cloud: PathBuf,
    pub detections: PathBuf,
    pub ground_truth: PathBuf,
}

/// Index of an emitted dataset; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(rename = "T_CL_true")]
    pub t_cl_true: RigidTransform,
    pub target: PathBuf,
    pub intrinsics: PathBuf,
    pub calib_config: PathBuf,
    pub scenes: Vec<ManifestScene>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn load_manifest(path: &Path) -> Result<Manifest, SimError> {
    let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| SimError::InvalidConfig(format!("manifest: {e}")))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), SimError> {
    write_atomic(path, bytes).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text.into_bytes()
}

/// Simulates `config` and writes the dataset into `out_dir`: per scene a PCD
/// cloud, a detections file and a ground-truth file, plus the target,
/// intrinsics, a ready-to-run calibration config and the manifest.
pub fn generate_scene_set(config: &SimConfig, base_dir: &Path, out_dir: &Path) -> Result<Manifest, SimError> {
    let set = simulate_scene_set(config, base_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|source| SimError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut manifest_scenes = Vec::with_capacity(set.scenes.len());
    let mut entries = Vec::with_capacity(set.scenes.len());
    let mut global_roi: Option<RoiBounds> = None;
    for s in &set.scenes {
        let names = ManifestScene {
            id: s.id.clone(),
            cloud: format!("{}.pcd", s.id).into(),
            detections: format!("{}_detections.json", s.id).into(),
            ground_truth: format!("{}_gt.json", s.id).into(),
        };
        let cloud_bytes = match config.pcd_encoding {
            PcdEncoding::Ascii => encode_cloud_ascii(&s.cloud).into_bytes(),
            PcdEncoding::Binary => encode_cloud_binary(&s.cloud),
        };
        write(&out_dir.join(&names.cloud), &cloud_bytes)?;
        let mut det = s.detections.to_json();
        det.push('\n');
        write(&out_dir.join(&names.detections), det.as_bytes())?;
        write(&out_dir.join(&names.ground_truth), &json(&s.ground_truth))?;
        entries.push(SceneEntry {
            id: s.id.clone(),
            cloud: names.cloud.clone(),
            detections: names.detections.clone(),
            roi: Some(s.roi),
        });
        global_roi = Some(match global_roi {
            Some(r) => union(&r, &s.roi),
            None => s.roi,
        });
        manifest_scenes.push(names);
    }
    let calib = CalibConfig {
        target: Source::Path("target.json".into()),
        intrinsics: Source::Path("intrinsics.json".into()),
        roi: global_roi.expect("at least one scene"),
        thresholds: Thresholds::default(),
        scenes: entries,
    };
    write(&out_dir.join("target.json"), &json(&set.target))?;
    write(&out_dir.join("intrinsics.json"), &json(&set.intrinsics))?;
    write(&out_dir.join("calib.json"), &json(&calib))?;
    let manifest = Manifest {
        t_cl_true: set.t_cl_true,
        target: "target.json".into(),
        intrinsics: "intrinsics.json".into(),
        calib_config: "calib.json".into(),
        scenes: manifest_scenes,
    };
    write(&out_dir.join(MANIFEST_FILE), &json(&manifest))?;
    Ok(manifest)
}
