//! Calibration run configuration: one JSON document naming the target, the
//! camera intrinsics, a rough ROI, the pipeline thresholds and the scenes.
//! Relative paths resolve against the directory holding the config file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lidar::{LidarParams, RansacParams, RoiBounds};
use crate::target::{load_intrinsics, load_target_config, CameraIntrinsics, TargetError, TargetGeometry};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Target(#[from] TargetError),
}

/// Either a path to a JSON file or the object inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub ransac_inlier_m: f64,
    pub voxel_leaf_m: f64,
    pub edge_radius_m: f64,
    pub edge_gap_deg: f64,
    pub axis_tol_m: f64,
    pub ecc_max: f64,
    pub cluster_tol_m: f64,
    pub cluster_min: usize,
    pub ransac_iters: usize,
    pub seed: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            ransac_inlier_m: 0.01,
            voxel_leaf_m: 0.008,
            edge_radius_m: 0.03,
            edge_gap_deg: 25.0,
            axis_tol_m: 0.04,
            ecc_max: 0.6,
            cluster_tol_m: 0.02,
            cluster_min: 15,
            ransac_iters: 1000,
            seed: 0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let named = [
            ("ransac_inlier_m", self.ransac_inlier_m),
            ("voxel_leaf_m", self.voxel_leaf_m),
            ("edge_radius_m", self.edge_radius_m),
            ("edge_gap_deg", self.edge_gap_deg),
            ("axis_tol_m", self.axis_tol_m),
            ("ecc_max", self.ecc_max),
            ("cluster_tol_m", self.cluster_tol_m),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("thresholds.{name} must be positive")));
            }
        }
        if self.edge_gap_deg >= 360.0 {
            return Err(ConfigError::Invalid("thresholds.edge_gap_deg must be below 360".into()));
        }
        if self.cluster_min == 0 || self.ransac_iters == 0 {
            return Err(ConfigError::Invalid(
                "thresholds.cluster_min and thresholds.ransac_iters must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn lidar_params(&self) -> LidarParams {
        LidarParams {
            ransac: RansacParams {
                inlier_threshold: self.ransac_inlier_m,
                max_iters: self.ransac_iters,
                seed: self.seed,
                ..RansacParams::default()
            },
            voxel_leaf: self.voxel_leaf_m,
            edge_radius: self.edge_radius_m,
            edge_gap_deg: self.edge_gap_deg,
            cluster_tolerance: self.cluster_tol_m,
            cluster_min_size: self.cluster_min,
            axis_tol: self.axis_tol_m,
            ecc_max: self.ecc_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    pub id: String,
    pub cloud: PathBuf,
    pub detections: PathBuf,
    /// Replaces the global ROI for this scene.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi: Option<RoiBounds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibConfig {
    pub target: Source<TargetGeometry>,
    pub intrinsics: Source<CameraIntrinsics>,
    pub roi: RoiBounds,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub scenes: Vec<SceneEntry>,
}

/// A scene with its paths made absolute and its ROI decided.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedScene {
    pub id: String,
    pub cloud: PathBuf,
    pub detections: PathBuf,
    pub roi: RoiBounds,
}

#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub target: TargetGeometry,
    pub intrinsics: CameraIntrinsics,
    pub thresholds: Thresholds,
    pub scenes: Vec<ResolvedScene>,
}

impl CalibConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.thresholds.validate()?;
        self.roi
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("roi: {e}")))?;
        if self.scenes.is_empty() {
            return Err(ConfigError::Invalid("at least one scene is required".into()));
        }
        let mut ids = HashSet::new();
        for s in &self.scenes {
            if !ids.insert(s.id.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate scene id '{}'", s.id)));
            }
            if let Some(roi) = &s.roi {
                roi.validate()
                    .map_err(|e| ConfigError::Invalid(format!("scene '{}' roi: {e}", s.id)))?;
            }
        }
        Ok(())
    }

    /// Loads referenced target and intrinsics files and makes scene paths
    /// absolute relative to `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedConfig, ConfigError> {
        self.validate()?;
        let target = match &self.target {
            Source::Path(p) => load_target_config(&base_dir.join(p))?,
            Source::Inline(t) => t.clone(),
        };
        let intrinsics = match &self.intrinsics {
            Source::Path(p) => load_intrinsics(&base_dir.join(p))?,
            Source::Inline(k) => {
                k.validate()?;
                *k
            }
        };
        let scenes = self
            .scenes
            .iter()
            .map(|s| ResolvedScene {
                id: s.id.clone(),
                cloud: base_dir.join(&s.cloud),
                detections: base_dir.join(&s.detections),
                roi: s.roi.unwrap_or(self.roi),
            })
            .collect();
        Ok(ResolvedConfig {
            target,
            intrinsics,
            thresholds: self.thresholds,
            scenes,
        })
    }
}

/// Reads, validates and resolves a config file.
pub fn load_calib_config(path: &Path) -> Result<ResolvedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let config = CalibConfig::parse(&text, path)?;
    config.resolve(path.parent().unwrap_or(Path::new(".")))
}
