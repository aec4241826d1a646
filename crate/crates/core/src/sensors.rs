//! Synthetic LiDAR, depth camera and 2D detector driven by ground truth.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraModel, PointCloud, RobotState, Vec3};
use crate::simworld::{ObstacleClass, WorldState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarSpec {
    pub rays_azimuth: usize,
    pub rays_elevation: usize,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub max_range: f64,
    pub range_noise: f64,
    pub dropout: f64,
    /// Mounting offset of the sensor origin in the body frame.
    pub mount: Vec3,
    /// A scan is produced every `period_steps` simulation steps.
    pub period_steps: usize,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            rays_azimuth: 360,
            rays_elevation: 16,
            elevation_min: (-7.0f64).to_radians(),
            elevation_max: 22.0f64.to_radians(),
            max_range: 40.0,
            range_noise: 0.02,
            dropout: 0.02,
            mount: Vec3::ZERO,
            period_steps: 1,
        }
    }
}

impl LidarSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rays_azimuth > 0
            && self.rays_elevation > 0
            && self.elevation_min <= self.elevation_max
            && self.max_range > 0.0
            && self.range_noise >= 0.0
            && (0.0..=1.0).contains(&self.dropout)
            && self.period_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid lidar spec".into()))
        }
    }

    fn elevations(&self) -> Vec<f64> {
        if self.rays_elevation == 1 {
            return vec![self.elevation_min];
        }
        let step = (self.elevation_max - self.elevation_min) / (self.rays_elevation - 1) as f64;
        (0..self.rays_elevation).map(|i| self.elevation_min + step * i as f64).collect()
    }

    pub fn origin(&self, robot: &RobotState) -> Vec3 {
        robot.position + Vec3::from_na(&(robot.world_from_body() * self.mount.to_na()))
    }
}

/// First positive hit distance of a unit ray against a sphere.
pub fn ray_sphere(origin: Vec3, dir: Vec3, center: Vec3, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = dir.dot(oc);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let near = -b - s;
    if near > 0.0 {
        return Some(near);
    }
    let far = -b + s;
    (far > 0.0).then_some(far)
}

/// Casts the azimuth x elevation grid from the sensor origin against every
/// active obstacle sphere and the ground plane `z = 0`.
pub fn render_lidar<R: Rng>(world: &WorldState, spec: &LidarSpec, rng: &mut R) -> PointCloud {
    let origin = spec.origin(&world.robot);
    let noise = (spec.range_noise > 0.0).then(|| Normal::new(0.0, spec.range_noise).expect("sigma >= 0"));
    let elev: Vec<(f64, f64)> = spec.elevations().into_iter().map(|e| e.sin_cos()).collect();
    let spheres: Vec<(Vec3, f64)> =
        world.obstacles.iter().filter(|o| o.active).map(|o| (o.position, o.radius)).collect();

    let mut points = Vec::new();
    for j in 0..spec.rays_azimuth {
        let az = world.robot.yaw + 2.0 * PI * j as f64 / spec.rays_azimuth as f64;
        let (sa, ca) = az.sin_cos();
        for &(se, ce) in &elev {
            let dir = Vec3::new(ce * ca, ce * sa, se);
            let mut best = f64::INFINITY;
            for &(c, r) in &spheres {
                if let Some(t) = ray_sphere(origin, dir, c, r) {
                    best = best.min(t);
                }
            }
            if dir.z < 0.0 {
                best = best.min(-origin.z / dir.z);
            }
            if !(best <= spec.max_range) {
                continue;
            }
            if spec.dropout > 0.0 && rng.random::<f64>() < spec.dropout {
                continue;
            }
            let range = match &noise {
                Some(n) => (best + n.sample(rng)).max(0.0),
                None => best,
            };
            points.push(origin + dir * range);
        }
    }
    PointCloud::new(world.time, points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    pub hfov: f64,
    /// Mounting offset of the optical center in the body frame.
    pub mount: Vec3,
    /// Depth reported for pixels that see no surface.
    pub far_plane: f64,
    pub depth_noise: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            hfov: 87.0f64.to_radians(),
            mount: Vec3::new(0.25, 0.0, 0.05),
            far_plane: 10.0,
            depth_noise: 0.005,
        }
    }
}

impl CameraSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.width > 0
            && self.height > 0
            && self.hfov > 0.0
            && self.hfov < PI
            && self.far_plane > 0.0
            && self.depth_noise >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid camera spec".into()))
        }
    }

    pub fn focal_length(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov / 2.0).tan()
    }

    pub fn model(&self, robot: &RobotState) -> CameraModel {
        CameraModel::mounted_on(robot, self.focal_length(), self.width, self.height, self.mount)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub timestamp: f64,
    pub far_plane: f64,
    /// Row-major depths along the optical axis; 0 means no return.
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn filled(width: usize, height: usize, depth: f64, timestamp: f64) -> Self {
        Self { width, height, timestamp, far_plane: depth, data: vec![depth; width * height] }
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, depth: f64) {
        self.data[v * self.width + u] = depth;
    }

    /// Whether a depth value is an actual surface return.
    pub fn is_valid(&self, depth: f64) -> bool {
        depth > 0.0 && depth < self.far_plane
    }
}

/// Exact pixel-space bounding box `(u_min, v_min, u_max, v_max)` of a sphere's
/// silhouette, given its camera-frame center. Requires the sphere to lie
/// entirely in front of the camera.
pub fn sphere_silhouette(cam: &CameraModel, center: Vec3, radius: f64) -> Option<[f64; 4]> {
    let (x, y, z, r) = (center.x, center.y, center.z, radius);
    let denom = z * z - r * r;
    if z <= r || denom <= 0.0 {
        return None;
    }
    // tangent planes through the optical center: x = k z and y = k z
    let ku = r * (x * x + z * z - r * r).sqrt();
    let kv = r * (y * y + z * z - r * r).sqrt();
    let u0 = cam.fx * (x * z - ku) / denom + cam.cx;
    let u1 = cam.fx * (x * z + ku) / denom + cam.cx;
    let v0 = cam.fy * (y * z - kv) / denom + cam.cy;
    let v1 = cam.fy * (y * z + kv) / denom + cam.cy;
    Some([u0, v0, u1, v1])
}

/// Per-pixel ray casting against obstacle spheres; the nearest surface wins.
pub fn render_depth<R: Rng>(world: &WorldState, cam: &CameraModel, spec: &CameraSpec, rng: &mut R) -> DepthImage {
    let (w, h) = (cam.width, cam.height);
    let mut img = DepthImage::filled(w, h, spec.far_plane, world.time);
    for o in world.obstacles.iter().filter(|o| o.active) {
        let c = cam.world_to_camera(o.position);
        if c.z + o.radius <= 0.0 {
            continue;
        }
        let (i0, j0, i1, j1) = match sphere_silhouette(cam, c, o.radius) {
            Some([u0, v0, u1, v1]) => {
                if u1 < -0.5 || v1 < -0.5 || u0 > w as f64 - 0.5 || v0 > h as f64 - 0.5 {
                    continue;
                }
                (
                    u0.floor().max(0.0) as usize,
                    v0.floor().max(0.0) as usize,
                    (u1.ceil().max(0.0) as usize).min(w - 1),
                    (v1.ceil().max(0.0) as usize).min(h - 1),
                )
            }
            // camera inside or straddling the sphere
            None => (0, 0, w - 1, h - 1),
        };
        let cc = c.norm_squared() - o.radius * o.radius;
        for j in j0..=j1 {
            for i in i0..=i1 {
                let d = cam.pixel_ray(i as f64, j as f64);
                let a = d.norm_squared();
                let b = -2.0 * d.dot(c);
                let disc = b * b - 4.0 * a * cc;
                if disc < 0.0 {
                    continue;
                }
                let s = disc.sqrt();
                let mut t = (-b - s) / (2.0 * a);
                if t <= 0.0 {
                    t = (-b + s) / (2.0 * a);
                }
                if t > 0.0 && t < img.get(i, j) {
                    img.set(i, j, t);
                }
            }
        }
    }
    if spec.depth_noise > 0.0 {
        let n = Normal::new(0.0, spec.depth_noise).expect("sigma >= 0");
        let far = spec.far_plane;
        for d in img.data.iter_mut().filter(|d| **d < far) {
            *d = (*d + n.sample(rng)).clamp(1e-3, far);
        }
    }
    img
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub class: String,
    /// `[u_min, v_min, u_max, v_max]` in pixels.
    pub bbox: [f64; 4],
    pub confidence: f64,
    pub time: f64,
}

impl Detection2D {
    pub fn center(&self) -> (f64, f64) {
        ((self.bbox[0] + self.bbox[2]) / 2.0, (self.bbox[1] + self.bbox[3]) / 2.0)
    }

    pub fn is_valid(&self, width: usize, height: usize) -> bool {
        let [u0, v0, u1, v1] = self.bbox;
        u0 < u1
            && v0 < v1
            && u0 >= 0.0
            && v0 >= 0.0
            && u1 <= (width - 1) as f64
            && v1 <= (height - 1) as f64
            && (0.0..=1.0).contains(&self.confidence)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    /// Gaussian jitter applied to each box corner, pixels.
    pub bbox_noise: f64,
    pub false_negative: f64,
    /// Probability of one spurious detection per frame.
    pub false_positive: f64,
    pub confidence_mean: f64,
    pub confidence_std: f64,
    /// Boxes narrower than this after clipping are not reported.
    pub min_box: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            bbox_noise: 1.0,
            false_negative: 0.05,
            false_positive: 0.02,
            confidence_mean: 0.8,
            confidence_std: 0.12,
            min_box: 2.0,
        }
    }
}

impl DetectorSpec {
    pub fn noiseless() -> Self {
        Self {
            bbox_noise: 0.0,
            false_negative: 0.0,
            false_positive: 0.0,
            confidence_mean: 0.9,
            confidence_std: 0.0,
            min_box: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.bbox_noise >= 0.0
            && (0.0..=1.0).contains(&self.false_negative)
            && (0.0..=1.0).contains(&self.false_positive)
            && (0.0..=1.0).contains(&self.confidence_mean)
            && self.confidence_std >= 0.0
            && self.min_box >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid detector spec".into()))
        }
    }
}

fn clip_box(b: [f64; 4], cam: &CameraModel) -> [f64; 4] {
    let (wmax, hmax) = ((cam.width - 1) as f64, (cam.height - 1) as f64);
    [b[0].clamp(0.0, wmax), b[1].clamp(0.0, hmax), b[2].clamp(0.0, wmax), b[3].clamp(0.0, hmax)]
}

/// Stand-in for a neural detector: projects visible spheres to their
/// silhouette boxes, then applies jitter, misses and spurious boxes.
pub fn synthetic_detector<R: Rng>(
    world: &WorldState,
    cam: &CameraModel,
    spec: &DetectorSpec,
    rng: &mut R,
) -> Vec<Detection2D> {
    let jitter = (spec.bbox_noise > 0.0).then(|| Normal::new(0.0, spec.bbox_noise).expect("sigma >= 0"));
    let conf = Normal::new(spec.confidence_mean, spec.confidence_std).expect("sigma >= 0");
    let mut out = Vec::new();
    for o in world.obstacles.iter().filter(|o| o.active) {
        let c = cam.world_to_camera(o.position);
        let Some(raw) = sphere_silhouette(cam, c, o.radius) else { continue };
        if raw[2] < 0.0 || raw[3] < 0.0 || raw[0] > (cam.width - 1) as f64 || raw[1] > (cam.height - 1) as f64 {
            continue;
        }
        let mut b = raw;
        if let Some(n) = &jitter {
            for x in b.iter_mut() {
                *x += n.sample(rng);
            }
        }
        let b = clip_box([b[0].min(b[2]), b[1].min(b[3]), b[0].max(b[2]), b[1].max(b[3])], cam);
        let missed = spec.false_negative > 0.0 && rng.random::<f64>() < spec.false_negative;
        let confidence = conf.sample(rng).clamp(0.05, 1.0);
        if missed || b[2] - b[0] < spec.min_box.max(1e-9) || b[3] - b[1] < spec.min_box.max(1e-9) {
            continue;
        }
        out.push(Detection2D { class: o.class.as_str().to_string(), bbox: b, confidence, time: world.time });
    }
    if spec.false_positive > 0.0 && rng.random::<f64>() < spec.false_positive {
        let (w, h) = ((cam.width - 1) as f64, (cam.height - 1) as f64);
        let bw = rng.random_range(8.0..40.0f64).min(w);
        let bh = rng.random_range(8.0..40.0f64).min(h);
        let u0 = rng.random_range(0.0..(w - bw).max(1.0));
        let v0 = rng.random_range(0.0..(h - bh).max(1.0));
        let class = [ObstacleClass::Human, ObstacleClass::Ball, ObstacleClass::Stick][rng.random_range(0..3)];
        out.push(Detection2D {
            class: class.as_str().to_string(),
            bbox: [u0, v0, (u0 + bw).min(w), (v0 + bh).min(h)],
            confidence: rng.random_range(0.1..0.6),
            time: world.time,
        });
    }
    out
}
