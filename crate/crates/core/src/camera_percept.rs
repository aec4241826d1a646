//! Camera refinement: two-stage 2D box tracking, depth segmentation seeded at
//! the box center, and 3D position, radius and velocity estimation.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraModel, Vec3};
use crate::lidar_percept::hungarian::match_gated;
use crate::lidar_percept::ObstacleTrack;
use crate::sensors::{DepthImage, Detection2D};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraParams {
    /// Detections at or above this confidence may start tracks.
    pub high_confidence: f64,
    /// Detections below this confidence are ignored entirely.
    pub low_confidence: f64,
    pub iou_gate: f64,
    /// A 2D track is dropped after missing more than this many frames.
    pub max_misses: usize,
    pub depth_tolerance: f64,
    pub min_points: usize,
    /// Radius in pixels searched for a valid seed around the box center.
    pub seed_search: usize,
    pub velocity_window: usize,
    /// Weight of the newest velocity in the exponential blend.
    pub velocity_smoothing: f64,
    /// Largest distance at which a camera estimate inherits a LiDAR id.
    pub bridge_distance: f64,
    /// Fit a sphere to the segmented surface before falling back to moments.
    pub sphere_fit: bool,
}

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            high_confidence: 0.5,
            low_confidence: 0.1,
            iou_gate: 0.2,
            max_misses: 5,
            depth_tolerance: 0.15,
            min_points: 20,
            seed_search: 5,
            velocity_window: 5,
            velocity_smoothing: 0.5,
            bridge_distance: 0.5,
            sphere_fit: true,
        }
    }
}

impl CameraParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.high_confidence)
            && (0.0..=self.high_confidence).contains(&self.low_confidence)
            && (0.0..=1.0).contains(&self.iou_gate)
            && self.depth_tolerance >= 0.0
            && self.min_points >= 1
            && self.velocity_window >= 2
            && self.velocity_smoothing > 0.0
            && self.velocity_smoothing <= 1.0
            && self.bridge_distance >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid camera tracking parameters".into()))
        }
    }
}

pub fn iou2d(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let area = |r: &[f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track2D {
    pub id: u32,
    pub bbox: [f64; 4],
    pub class: String,
    pub confidence: f64,
    /// Frames since birth.
    pub age: usize,
    pub misses: usize,
    /// Per-frame box corner displacement used to predict the next box.
    pub motion: [f64; 4],
}

/// Two-stage association: confident detections first, then the remaining
/// tracks against weak detections. Only confident detections spawn tracks.
#[derive(Debug, Clone, Default)]
pub struct ByteTracker {
    tracks: Vec<Track2D>,
    next_id: u32,
}

impl ByteTracker {
    pub fn tracks(&self) -> &[Track2D] {
        &self.tracks
    }

    fn match_stage(&self, tracks: &[usize], dets: &[&Detection2D], gate: f64) -> Vec<(usize, usize)> {
        let cost: Vec<Vec<Option<f64>>> = tracks
            .iter()
            .map(|&ti| {
                dets.iter()
                    .map(|d| {
                        let iou = iou2d(&self.tracks[ti].bbox, &d.bbox);
                        (iou >= gate && iou > 0.0).then_some(-iou)
                    })
                    .collect()
            })
            .collect();
        match_gated(&cost, dets.len()).pairs.into_iter().map(|(r, c)| (tracks[r], c)).collect()
    }

    pub fn update(&mut self, dets: &[Detection2D], p: &CameraParams) -> &[Track2D] {
        for t in &mut self.tracks {
            for k in 0..4 {
                t.bbox[k] += t.motion[k];
            }
            if t.bbox[2] <= t.bbox[0] || t.bbox[3] <= t.bbox[1] {
                t.motion = [0.0; 4];
            }
        }
        let high: Vec<&Detection2D> = dets.iter().filter(|d| d.confidence >= p.high_confidence).collect();
        let low: Vec<&Detection2D> =
            dets.iter().filter(|d| d.confidence < p.high_confidence && d.confidence >= p.low_confidence).collect();

        let all: Vec<usize> = (0..self.tracks.len()).collect();
        let first = self.match_stage(&all, &high, p.iou_gate);
        let matched: Vec<usize> = first.iter().map(|(t, _)| *t).collect();
        let rest: Vec<usize> = all.iter().copied().filter(|t| !matched.contains(t)).collect();
        let second = self.match_stage(&rest, &low, p.iou_gate);

        let mut updated = vec![false; self.tracks.len()];
        for (ti, det) in first.iter().map(|&(t, d)| (t, high[d])).chain(second.iter().map(|&(t, d)| (t, low[d]))) {
            let t = &mut self.tracks[ti];
            let prev = t.bbox;
            let mut motion = [0.0; 4];
            for k in 0..4 {
                // prev already includes the old motion; blend toward the observed shift
                let observed = det.bbox[k] - (prev[k] - t.motion[k]);
                motion[k] = 0.5 * t.motion[k] + 0.5 * observed;
            }
            t.motion = motion;
            t.bbox = det.bbox;
            t.confidence = det.confidence;
            t.class = det.class.clone();
            t.misses = 0;
            updated[ti] = true;
        }
        for (t, up) in self.tracks.iter_mut().zip(&updated) {
            t.age += 1;
            if !up {
                t.misses += 1;
            }
        }
        self.tracks.retain(|t| t.misses <= p.max_misses);

        let used: Vec<usize> = first.iter().map(|(_, d)| *d).collect();
        for (di, d) in high.iter().enumerate() {
            if used.contains(&di) {
                continue;
            }
            self.tracks.push(Track2D {
                id: self.next_id,
                bbox: d.bbox,
                class: d.class.clone(),
                confidence: d.confidence,
                age: 0,
                misses: 0,
                motion: [0.0; 4],
            });
            self.next_id += 1;
        }
        &self.tracks
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Segment {
    /// Pixels `(u, v)` in row-major order.
    pub pixels: Vec<(usize, usize)>,
    pub seed_on_background: bool,
}

/// Nearest pixel with a valid depth, searched in square rings around the
/// rounded point up to `radius` pixels away.
pub fn find_seed(depth: &DepthImage, u: f64, v: f64, radius: usize) -> Option<(usize, usize)> {
    let (w, h) = (depth.width as i64, depth.height as i64);
    let (cu, cv) = (u.round() as i64, v.round() as i64);
    for r in 0..=radius as i64 {
        let mut ring = Vec::new();
        for dv in -r..=r {
            for du in -r..=r {
                if du.abs().max(dv.abs()) == r {
                    ring.push((du, dv));
                }
            }
        }
        ring.sort_by_key(|&(du, dv)| (du * du + dv * dv, dv, du));
        for (du, dv) in ring {
            let (pu, pv) = (cu + du, cv + dv);
            if pu >= 0 && pv >= 0 && pu < w && pv < h && depth.is_valid(depth.get(pu as usize, pv as usize)) {
                return Some((pu as usize, pv as usize));
            }
        }
    }
    None
}

/// 4-connected flood fill accepting neighbours whose depth differs from the
/// current pixel by at most `tolerance`.
pub fn bfs_segment(seed: (usize, usize), depth: &DepthImage, tolerance: f64) -> Segment {
    let (w, h) = (depth.width, depth.height);
    if seed.0 >= w || seed.1 >= h || !depth.is_valid(depth.get(seed.0, seed.1)) {
        return Segment { pixels: Vec::new(), seed_on_background: true };
    }
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([seed]);
    seen[seed.1 * w + seed.0] = true;
    let mut pixels = Vec::new();
    while let Some((u, v)) = queue.pop_front() {
        pixels.push((u, v));
        let d = depth.get(u, v);
        let mut neighbours = [None; 4];
        if u > 0 {
            neighbours[0] = Some((u - 1, v));
        }
        if u + 1 < w {
            neighbours[1] = Some((u + 1, v));
        }
        if v > 0 {
            neighbours[2] = Some((u, v - 1));
        }
        if v + 1 < h {
            neighbours[3] = Some((u, v + 1));
        }
        for (nu, nv) in neighbours.into_iter().flatten() {
            let idx = nv * w + nu;
            if seen[idx] {
                continue;
            }
            let nd = depth.data[idx];
            if depth.is_valid(nd) && (nd - d).abs() <= tolerance {
                seen[idx] = true;
                queue.push_back((nu, nv));
            }
        }
    }
    pixels.sort_by_key(|&(u, v)| (v, u));
    Segment { pixels, seed_on_background: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate3D {
    pub position: Vec3,
    pub radius: f64,
    pub n_points: usize,
    /// Whether the sphere fit was used rather than the moment estimate.
    pub fitted: bool,
}

/// Moment estimate: the radius is 3/2 of the mean distance to the centroid
/// and the center is pushed half a radius along the viewing ray.
pub fn moment_estimate(points: &[Vec3]) -> (Vec3, f64) {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::ZERO, |a, p| a + *p) / n;
    let mean_dist = points.iter().map(|p| p.distance(centroid)).sum::<f64>() / n;
    let radius = 1.5 * mean_dist;
    let ray = centroid.try_normalize().unwrap_or(Vec3::new(0.0, 0.0, 1.0));
    (centroid + ray * (radius / 2.0), radius)
}

/// Algebraic least-squares sphere through surface points. Returns `None`
/// when the points do not constrain a sphere (e.g. a flat patch).
pub fn fit_sphere(points: &[Vec3]) -> Option<(Vec3, f64)> {
    if points.len() < 4 {
        return None;
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::ZERO, |a, p| a + *p) / n;
    let scale = points.iter().map(|p| p.distance(mean)).fold(0.0, f64::max);
    if scale <= 0.0 {
        return None;
    }
    // |q|^2 = 2 c.q + d over centered, scaled points q
    let mut ata = Matrix4::zeros();
    let mut atb = Vector4::zeros();
    for p in points {
        let q = (*p - mean) / scale;
        let row = Vector4::new(2.0 * q.x, 2.0 * q.y, 2.0 * q.z, 1.0);
        ata += row * row.transpose();
        atb += row * q.norm_squared();
    }
    let eig = SymmetricEigen::new(ata);
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if !(lo > 1e-6 * hi) {
        return None;
    }
    let sol = ata.cholesky()?.solve(&atb);
    let c = Vec3::new(sol[0], sol[1], sol[2]);
    let r2 = sol[3] + c.norm_squared();
    if !(r2 > 0.0) || !r2.is_finite() {
        return None;
    }
    Some((mean + c * scale, r2.sqrt() * scale))
}

/// Back-projects the segment and estimates the obstacle center (world frame)
/// and radius; `None` when fewer than `min_points` pixels are available.
pub fn estimate_3d(seg: &Segment, depth: &DepthImage, cam: &CameraModel, p: &CameraParams) -> Option<Estimate3D> {
    if seg.pixels.len() < p.min_points.max(1) {
        return None;
    }
    let pts: Vec<Vec3> =
        seg.pixels.iter().filter_map(|&(u, v)| cam.backproject(u as f64, v as f64, depth.get(u, v)).ok()).collect();
    if pts.len() < p.min_points.max(1) {
        return None;
    }
    let (m_center, m_radius) = moment_estimate(&pts);
    let centroid = pts.iter().fold(Vec3::ZERO, |a, q| a + *q) / pts.len() as f64;
    let fitted = p.sphere_fit.then(|| fit_sphere(&pts)).flatten().filter(|(c, r)| {
        // the center must sit behind the visible surface and agree in scale
        let ray = centroid.try_normalize().unwrap_or(Vec3::new(0.0, 0.0, 1.0));
        (*c - centroid).dot(ray) > 0.0 && *r > 0.5 * m_radius && *r < 2.0 * m_radius
    });
    let (center, radius, used_fit) = match fitted {
        Some((c, r)) => (c, r, true),
        None => (m_center, m_radius, false),
    };
    Some(Estimate3D { position: cam.camera_to_world(center), radius, n_points: pts.len(), fitted: used_fit })
}

/// Least-squares slope over the newest `window` samples; `None` with fewer
/// than two samples.
pub fn camera_velocity(samples: &[(Vec3, f64)], window: usize) -> Option<Vec3> {
    if samples.len() < 2 {
        return None;
    }
    let s = &samples[samples.len().saturating_sub(window.max(2))..];
    let n = s.len() as f64;
    let t_mean = s.iter().map(|x| x.1).sum::<f64>() / n;
    let p_mean = s.iter().fold(Vec3::ZERO, |a, x| a + x.0) / n;
    let mut num = Vec3::ZERO;
    let mut den = 0.0;
    for (p, t) in s {
        num += (*p - p_mean) * (t - t_mean);
        den += (t - t_mean) * (t - t_mean);
    }
    (den > 0.0).then(|| num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraObstacle {
    /// 2D track id.
    pub id: u32,
    /// LiDAR track id inherited when the estimates agree in position.
    pub lidar_id: Option<u32>,
    pub position: Vec3,
    pub velocity: Vec3,
    pub velocity_valid: bool,
    pub radius: f64,
    pub n_points: usize,
    pub time: f64,
}

#[derive(Debug, Clone, Default)]
struct ObjectState {
    samples: VecDeque<(Vec3, f64)>,
    velocity: Option<Vec3>,
}

/// Per-trial camera pipeline state.
#[derive(Debug, Clone)]
pub struct CameraTracker {
    pub params: CameraParams,
    boxes: ByteTracker,
    objects: BTreeMap<u32, ObjectState>,
}

impl CameraTracker {
    pub fn new(params: CameraParams) -> Self {
        Self { params, boxes: ByteTracker::default(), objects: BTreeMap::new() }
    }

    pub fn tracks(&self) -> &[Track2D] {
        self.boxes.tracks()
    }

    /// Processes one frame and returns 3D estimates for every box track
    /// observed this frame.
    pub fn process(
        &mut self,
        dets: &[Detection2D],
        depth: &DepthImage,
        cam: &CameraModel,
        lidar: &[ObstacleTrack],
    ) -> Vec<CameraObstacle> {
        let p = self.params.clone();
        let tracks: Vec<Track2D> = self.boxes.update(dets, &p).to_vec();
        let alive: Vec<u32> = tracks.iter().map(|t| t.id).collect();
        self.objects.retain(|id, _| alive.contains(id));

        let mut out = Vec::new();
        for t in tracks.iter().filter(|t| t.misses == 0) {
            let (cu, cv) = ((t.bbox[0] + t.bbox[2]) / 2.0, (t.bbox[1] + t.bbox[3]) / 2.0);
            let Some(seed) = find_seed(depth, cu, cv, p.seed_search) else { continue };
            let seg = bfs_segment(seed, depth, p.depth_tolerance);
            let Some(est) = estimate_3d(&seg, depth, cam, &p) else { continue };

            let state = self.objects.entry(t.id).or_default();
            state.samples.push_back((est.position, depth.timestamp));
            while state.samples.len() > p.velocity_window {
                state.samples.pop_front();
            }
            let samples: Vec<(Vec3, f64)> = state.samples.iter().copied().collect();
            if let Some(raw) = camera_velocity(&samples, p.velocity_window) {
                let lam = p.velocity_smoothing;
                state.velocity = Some(match state.velocity {
                    Some(prev) => raw * lam + prev * (1.0 - lam),
                    None => raw,
                });
            }
            let lidar_id = lidar
                .iter()
                .filter(|l| l.confirmed)
                .map(|l| (l.position().distance(est.position), l.id))
                .filter(|(d, _)| *d <= p.bridge_distance)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, id)| id);
            out.push(CameraObstacle {
                id: t.id,
                lidar_id,
                position: est.position,
                velocity: state.velocity.unwrap_or(Vec3::ZERO),
                velocity_valid: state.velocity.is_some(),
                radius: est.radius,
                n_points: est.n_points,
                time: depth.timestamp,
            });
        }
        out
    }
}
