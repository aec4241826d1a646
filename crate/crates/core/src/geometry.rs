//! Geometry primitives shared by the simulator, perception and control.
//!
//! Conventions: world frame is right-handed with `z` up, distances in meters,
//! angles in radians. Camera frames follow the pinhole convention (`z` along
//! the optical axis, `x` right, `y` down).

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn try_normalize(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 1e-12 && n.is_finite()).then(|| self / n)
    }

    pub fn xy(self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn distance_squared(self, o: Vec3) -> f64 {
        (self - o).norm_squared()
    }

    pub fn component_min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn component_max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn to_na(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_na(v: &Vector3<f64>) -> Self {
        Vec3::new(v.x, v.y, v.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn try_normalize(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 1e-12 && n.is_finite()).then(|| self / n)
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// Rescales to at most `max` length.
    pub fn clamp_norm(self, max: f64) -> Vec2 {
        let n = self.norm();
        if n > max && n > 0.0 {
            self * (max / n)
        } else {
            self
        }
    }

    pub fn extend(self, z: f64) -> Vec3 {
        Vec3::new(self.x, self.y, z)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid can return exactly 2π for tiny negative inputs
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Planar robot base state. Roll, pitch and leg joints are not modelled.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl RobotState {
    pub fn at(position: Vec3, yaw: f64) -> Self {
        Self { position, velocity: Vec3::ZERO, yaw: wrap_angle(yaw), yaw_rate: 0.0 }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.xy().norm()
    }

    /// Rotation taking body-frame vectors into the world frame.
    pub fn world_from_body(&self) -> Matrix3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }
}

/// Smallest half extent a box is allowed to have; keeps volumes positive for
/// clusters that happen to be planar.
pub const MIN_HALF_EXTENT: f64 = 5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb3 {
    pub center: Vec3,
    pub half_extents: Vec3,
}

impl Aabb3 {
    pub fn new(center: Vec3, half_extents: Vec3) -> Result<Self> {
        if !(half_extents.x > 0.0 && half_extents.y > 0.0 && half_extents.z > 0.0)
            || !center.is_finite()
            || !half_extents.is_finite()
        {
            return Err(Error::InvalidInput(format!(
                "box half extents must be positive and finite, got {half_extents:?}"
            )));
        }
        Ok(Self { center, half_extents })
    }

    /// Tight box around `points`, padded to [`MIN_HALF_EXTENT`] per axis.
    pub fn from_points(points: &[Vec3]) -> Option<Self> {
        let first = *points.first()?;
        let (lo, hi) = points.iter().fold((first, first), |(lo, hi), p| (lo.component_min(*p), hi.component_max(*p)));
        let half = (hi - lo) * 0.5;
        Some(Self {
            center: (lo + hi) * 0.5,
            half_extents: Vec3::new(
                half.x.max(MIN_HALF_EXTENT),
                half.y.max(MIN_HALF_EXTENT),
                half.z.max(MIN_HALF_EXTENT),
            ),
        })
    }

    pub fn min(&self) -> Vec3 {
        self.center - self.half_extents
    }

    pub fn max(&self) -> Vec3 {
        self.center + self.half_extents
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    pub fn translated(&self, by: Vec3) -> Self {
        Self { center: self.center + by, half_extents: self.half_extents }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        // tolerate rounding in the center/half-extent representation
        let slack = Vec3::new(1e-12, 1e-12, 1e-12) * (1.0 + self.center.norm());
        let (lo, hi) = (self.min() - slack, self.max() + slack);
        (lo.x..=hi.x).contains(&p.x) && (lo.y..=hi.y).contains(&p.y) && (lo.z..=hi.z).contains(&p.z)
    }
}

/// Intersection-over-union of two axis-aligned boxes.
pub fn aabb_iou3d(a: &Aabb3, b: &Aabb3) -> f64 {
    let lo = a.min().component_max(b.min());
    let hi = a.max().component_min(b.max());
    let d = hi - lo;
    if d.x <= 0.0 || d.y <= 0.0 || d.z <= 0.0 {
        return 0.0;
    }
    let inter = d.x * d.y * d.z;
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Result of projecting a world point through a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    InView { u: f64, v: f64, depth: f64 },
    OutOfView,
}

/// Pinhole camera with a world-from-camera extrinsic transform.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-from-camera rotation.
    pub rotation: Matrix3<f64>,
    /// Camera center in the world frame.
    pub translation: Vec3,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vec3,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || width == 0 || height == 0 {
            return Err(Error::InvalidInput("camera focal lengths and image size must be positive".into()));
        }
        let gram = rotation.transpose() * rotation;
        if (gram - Matrix3::identity()).abs().max() > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("camera rotation is not a proper rotation".into()));
        }
        Ok(Self { fx, fy, cx, cy, width, height, rotation, translation })
    }

    /// Camera looking along the robot's heading, mounted at `mount` (body frame).
    pub fn mounted_on(robot: &RobotState, fx: f64, width: usize, height: usize, mount: Vec3) -> Self {
        // body x forward, y left, z up  ->  camera z forward, x right, y down
        let body_from_cam = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        let wb = robot.world_from_body();
        Self {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation: wb * body_from_cam,
            translation: robot.position + Vec3::from_na(&(wb * mount.to_na())),
        }
    }

    /// Horizontal field of view implied by `fx` and `width`.
    pub fn hfov(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.fx)).atan()
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        Vec3::from_na(&(self.rotation.transpose() * (p - self.translation).to_na()))
    }

    pub fn camera_to_world(&self, p: Vec3) -> Vec3 {
        Vec3::from_na(&(self.rotation * p.to_na())) + self.translation
    }

    pub fn camera_dir_to_world(&self, d: Vec3) -> Vec3 {
        Vec3::from_na(&(self.rotation * d.to_na()))
    }

    /// Whether continuous pixel coordinates fall on the sensor. Pixel `(i, j)`
    /// is centered at `u = i`, `v = j`.
    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && u < self.width as f64 - 0.5 && v >= -0.5 && v < self.height as f64 - 0.5
    }

    pub fn project_camera(&self, pc: Vec3) -> Projection {
        if !(pc.z > 0.0) {
            return Projection::OutOfView;
        }
        let u = self.fx * pc.x / pc.z + self.cx;
        let v = self.fy * pc.y / pc.z + self.cy;
        if self.in_bounds(u, v) {
            Projection::InView { u, v, depth: pc.z }
        } else {
            Projection::OutOfView
        }
    }

    pub fn project(&self, p_world: Vec3) -> Projection {
        self.project_camera(self.world_to_camera(p_world))
    }

    /// Camera-frame point for pixel `(u, v)` at depth `z`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Result<Vec3> {
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::InvalidDepth(z));
        }
        Ok(Vec3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z))
    }

    /// Unnormalized camera-frame ray through pixel `(u, v)` with `z = 1`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub timestamp: f64,
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(timestamp: f64, points: Vec<Vec3>) -> Self {
        Self { timestamp, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
