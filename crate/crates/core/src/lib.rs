//! Simulation and reimplementation of a hierarchical LiDAR + camera perception
//! stack driving threat-aware reactive evasion for a legged robot.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] – vectors, boxes, pinhole camera, point clouds.
//! * [`simworld`] – deterministic stepped world, scenario generation, collisions.
//! * [`sensors`] – synthetic LiDAR, depth camera and 2D detector.
//! * [`lidar_percept`] – ROI filtering, DBSCAN, Hungarian association, track
//!   lifecycle, motion-consistency filter and Kalman smoothing.
//! * [`camera_percept`] – two-stage 2D tracking, depth segmentation and 3D
//!   refinement of tracked detections.
//! * [`predict`] – short-horizon forecasting backends.
//! * [`threat`] – threat level, time-to-collision, target selection and fusion.
//! * [`control`] – reorientation, retreat, reflex maneuver scoring and blending.
//! * [`eval`] – closed-loop trials, metrics, batches, baselines and file formats.

// `!(x > 0.0)` is used on purpose so that NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera_percept;
pub mod control;
pub mod eval;
pub mod geometry;
pub mod lidar_percept;
pub mod predict;
pub mod sensors;
pub mod simworld;
pub mod threat;

mod error;

pub use error::{Error, Result};
pub use geometry::{Aabb3, CameraModel, PointCloud, RobotState, Vec2, Vec3};
