//! Target-based LiDAR-camera extrinsic calibration.
//!
//! A board with four circular holes and four fiducial markers is observed by
//! both sensors. The LiDAR branch ([`lidar`]) finds the hole centers in the
//! point cloud; the camera branch ([`camera`]) recovers them from marker
//! corner detections; [`registration`] solves the rigid transform between the
//! two point sets in closed form, jointly over any number of scenes.
//! [`sim`] produces ground-truth-annotated synthetic scenes, and [`commands`]
//! wires everything into the `calibrate`, `simulate`, `residual` and
//! `colorize` commands.

pub mod camera;
pub mod cloud;
pub mod commands;
pub mod config;
pub mod geometry;
pub mod io_util;
pub mod lidar;
pub mod pcd;
pub mod ppm;
pub mod registration;
pub mod sim;
pub mod spatial;
pub mod target;

pub use cloud::PointCloud;
pub use geometry::{Point3, Quaternion, RigidTransform, Vec3};
pub use target::{CameraIntrinsics, MarkerSpec, TargetGeometry};
