//! Omnidirectional obstacle tracking from LiDAR point clouds: ROI filtering,
//! clustering, box association, track lifecycle, motion classification and
//! Kalman smoothing.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb3, PointCloud, RobotState, Vec3};
use crate::{Error, Result};

pub mod dbscan;
pub mod hungarian;
pub mod kalman;

pub use dbscan::{dbscan, Cluster, Clustering};
pub use hungarian::{associate, Matching};
pub use kalman::{Kalman3, KalmanConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarParams {
    pub ground_z: f64,
    pub ground_margin: f64,
    /// Horizontal crop radius around the robot.
    pub roi_radius: f64,
    pub voxel: f64,
    pub cluster_eps: f64,
    pub min_pts: usize,
    /// Largest horizontal displacement allowed between associated boxes.
    pub gate: f64,
    pub confirm_hits: usize,
    /// A track is deleted once it has missed more than this many frames.
    pub max_misses: usize,
    pub history: usize,
    /// Position covariance trace above which a track counts as moving, m^2.
    pub eps_position: f64,
    /// Speed standard deviation above which a track counts as moving, m/s.
    pub eps_speed: f64,
    pub sigma_accel: f64,
    pub sigma_meas: f64,
    pub sigma_vel0: f64,
    /// Smoothing weight given to each new radius measurement.
    pub radius_gain: f64,
    /// Shift box centers away from the sensor by half the radius estimate.
    pub bias_compensation: bool,
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            ground_z: 0.0,
            ground_margin: 0.12,
            roi_radius: 8.0,
            voxel: 0.08,
            cluster_eps: 0.35,
            min_pts: 4,
            gate: 1.0,
            confirm_hits: 3,
            max_misses: 3,
            history: 10,
            eps_position: 1e-3,
            eps_speed: 0.1,
            sigma_accel: 3.0,
            sigma_meas: 0.05,
            sigma_vel0: 20.0,
            radius_gain: 0.3,
            bias_compensation: true,
        }
    }
}

impl LidarParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ground_margin >= 0.0
            && self.roi_radius > 0.0
            && self.voxel >= 0.0
            && self.cluster_eps > 0.0
            && self.min_pts >= 1
            && self.gate > 0.0
            && self.confirm_hits >= 1
            && self.history >= 2
            && self.sigma_accel > 0.0
            && self.sigma_meas > 0.0
            && self.sigma_vel0 > 0.0
            && (0.0..=1.0).contains(&self.radius_gain);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid lidar tracking parameters".into()))
        }
    }

    pub fn kalman(&self) -> KalmanConfig {
        KalmanConfig { sigma_accel: self.sigma_accel, sigma_meas: self.sigma_meas, sigma_vel0: self.sigma_vel0 }
    }
}

/// Drops ground returns and far points, then keeps one averaged point per
/// occupied voxel (in voxel index order).
pub fn roi_filter(cloud: &PointCloud, robot: &RobotState, p: &LidarParams) -> PointCloud {
    let kept = cloud.points.iter().copied().filter(|q| {
        q.is_finite() && q.z >= p.ground_z + p.ground_margin && (q.xy() - robot.position.xy()).norm() <= p.roi_radius
    });
    if p.voxel <= 0.0 {
        return PointCloud::new(cloud.timestamp, kept.collect());
    }
    let mut cells: BTreeMap<(i64, i64, i64), (Vec3, usize)> = BTreeMap::new();
    for q in kept {
        let key = ((q.x / p.voxel).floor() as i64, (q.y / p.voxel).floor() as i64, (q.z / p.voxel).floor() as i64);
        let e = cells.entry(key).or_insert((Vec3::ZERO, 0));
        e.0 += q;
        e.1 += 1;
    }
    PointCloud::new(cloud.timestamp, cells.into_values().map(|(s, n)| s / n as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionClass {
    /// Not enough history yet.
    Unknown,
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistorySample {
    pub time: f64,
    /// Box center as observed.
    pub center: Vec3,
    /// Filtered position after the update.
    pub position: Vec3,
    /// Filtered velocity after the update.
    pub velocity: Vec3,
}

/// Position covariance trace and speed standard deviation over a window,
/// both population statistics.
pub fn motion_stats(history: &[HistorySample]) -> (f64, f64) {
    let n = history.len() as f64;
    let mean = history.iter().fold(Vec3::ZERO, |a, s| a + s.center) / n;
    let trace = history.iter().map(|s| (s.center - mean).norm_squared()).sum::<f64>() / n;
    let speeds: Vec<f64> = history.iter().map(|s| s.velocity.norm()).collect();
    let ms = speeds.iter().sum::<f64>() / n;
    let var = speeds.iter().map(|s| (s - ms).powi(2)).sum::<f64>() / n;
    (trace, var.sqrt())
}

/// Moving when either the position spread or the speed spread exceeds its
/// threshold; tracks with a short history stay unclassified.
pub fn classify_motion(history: &[HistorySample], window: usize, eps_position: f64, eps_speed: f64) -> MotionClass {
    if history.len() < window {
        return MotionClass::Unknown;
    }
    let (trace, sigma_v) = motion_stats(&history[history.len() - window..]);
    if trace > eps_position || sigma_v > eps_speed {
        MotionClass::Dynamic
    } else {
        MotionClass::Static
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleTrack {
    pub id: u32,
    pub filter: Kalman3,
    /// Last observed box, advanced by the filtered velocity between frames.
    pub bbox: Aabb3,
    pub radius: f64,
    pub hits: usize,
    pub misses: usize,
    pub confirmed: bool,
    pub motion: MotionClass,
    pub history: VecDeque<HistorySample>,
    pub last_seen: f64,
}

impl ObstacleTrack {
    pub fn position(&self) -> Vec3 {
        self.filter.position()
    }

    pub fn velocity(&self) -> Vec3 {
        self.filter.velocity()
    }

    /// Whether the track feeds threat evaluation.
    pub fn is_active(&self) -> bool {
        self.confirmed && self.motion == MotionClass::Dynamic
    }
}

/// Frame-to-frame tracker state for one trial.
#[derive(Debug, Clone)]
pub struct LidarTracker {
    pub params: LidarParams,
    tracks: Vec<ObstacleTrack>,
    next_id: u32,
    last_time: Option<f64>,
}

impl LidarTracker {
    pub fn new(params: LidarParams) -> Self {
        Self { params, tracks: Vec::new(), next_id: 0, last_time: None }
    }

    pub fn tracks(&self) -> &[ObstacleTrack] {
        &self.tracks
    }

    fn measurement(&self, center: Vec3, radius: f64, sensor: Vec3) -> Vec3 {
        if !self.params.bias_compensation {
            return center;
        }
        match (center - sensor).try_normalize() {
            Some(ray) => center + ray * (radius / 2.0),
            None => center,
        }
    }

    /// Processes one cloud; frames must arrive in time order.
    pub fn process(&mut self, cloud: &PointCloud, robot: &RobotState) -> Result<&[ObstacleTrack]> {
        let p = self.params.clone();
        let kcfg = p.kalman();
        let dt = match self.last_time {
            Some(t) if cloud.timestamp > t => cloud.timestamp - t,
            Some(_) => return Err(Error::InvalidInput("point clouds out of time order".into())),
            None => 0.0,
        };
        self.last_time = Some(cloud.timestamp);

        let roi = roi_filter(cloud, robot, &p);
        let clusters = dbscan(&roi.points, p.cluster_eps, p.min_pts).clusters;

        if dt > 0.0 {
            for t in &mut self.tracks {
                t.filter.predict(dt, &kcfg);
                t.bbox = t.bbox.translated(t.filter.velocity() * dt);
            }
        }
        let prev: Vec<Aabb3> = self.tracks.iter().map(|t| t.bbox).collect();
        let curr: Vec<Aabb3> = clusters.iter().map(|c| c.bbox).collect();
        let matching = associate(&prev, &curr, p.gate);

        for &(ti, ci) in &matching.pairs {
            let bbox = clusters[ci].bbox;
            let r_meas = bbox.half_extents.x.max(bbox.half_extents.y);
            let radius = {
                let t = &self.tracks[ti];
                t.radius + p.radius_gain * (r_meas - t.radius)
            };
            let z = self.measurement(clusters[ci].centroid, radius, robot.position);
            let t = &mut self.tracks[ti];
            t.radius = radius;
            t.filter.update(z, &kcfg)?;
            t.bbox = bbox;
            t.hits += 1;
            t.misses = 0;
            t.last_seen = cloud.timestamp;
            t.confirmed |= t.hits >= p.confirm_hits;
            t.history.push_back(HistorySample {
                time: cloud.timestamp,
                center: bbox.center,
                position: t.filter.position(),
                velocity: t.filter.velocity(),
            });
            while t.history.len() > p.history {
                t.history.pop_front();
            }
        }
        for &ti in &matching.unmatched_rows {
            self.tracks[ti].misses += 1;
        }
        self.tracks.retain(|t| t.misses <= p.max_misses);

        for &ci in &matching.unmatched_cols {
            let bbox = clusters[ci].bbox;
            let radius = bbox.half_extents.x.max(bbox.half_extents.y);
            let z = self.measurement(clusters[ci].centroid, radius, robot.position);
            let filter = Kalman3::new(z, &kcfg);
            let history = VecDeque::from([HistorySample {
                time: cloud.timestamp,
                center: bbox.center,
                position: filter.position(),
                velocity: filter.velocity(),
            }]);
            self.tracks.push(ObstacleTrack {
                id: self.next_id,
                filter,
                bbox,
                radius,
                hits: 1,
                misses: 0,
                confirmed: p.confirm_hits <= 1,
                motion: MotionClass::Unknown,
                history,
                last_seen: cloud.timestamp,
            });
            self.next_id += 1;
        }

        for t in &mut self.tracks {
            let h: Vec<HistorySample> = t.history.iter().copied().collect();
            t.motion = classify_motion(&h, p.history, p.eps_position, p.eps_speed);
        }
        Ok(&self.tracks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::{render_lidar, LidarSpec};
    use crate::simworld::{ObstacleTruth, RobotSpec, Trajectory, WorldState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn robot() -> RobotState {
        RobotState::at(Vec3::new(0.0, 0.0, 0.3), 0.0)
    }

    #[test]
    fn roi_removes_ground_and_far_points() {
        let p = LidarParams { ground_margin: 0.1, ..Default::default() };
        let ground = PointCloud::new(0.0, (0..10).map(|i| Vec3::new(i as f64 * 0.3, 0.0, 0.0)).collect());
        assert!(roi_filter(&ground, &robot(), &p).is_empty());
        let far = PointCloud::new(0.0, vec![Vec3::new(100.0, 0.0, 0.5)]);
        assert!(roi_filter(&far, &robot(), &LidarParams { roi_radius: 8.0, ..p.clone() }).is_empty());
        let pair = PointCloud::new(0.0, vec![Vec3::new(1.01, 1.01, 0.51), Vec3::new(1.03, 1.02, 0.52)]);
        let out = roi_filter(&pair, &robot(), &LidarParams { voxel: 0.1, ..p });
        assert_eq!(out.len(), 1);
        assert!((out.points[0] - Vec3::new(1.02, 1.015, 0.515)).norm() < 1e-12);
    }

    fn sample(t: f64, center: Vec3, velocity: Vec3) -> HistorySample {
        HistorySample { time: t, center, position: center, velocity }
    }

    #[test]
    fn static_history_is_static() {
        let h: Vec<HistorySample> =
            (0..10).map(|i| sample(i as f64 * 0.02, Vec3::new(1.0, 2.0, 0.5), Vec3::ZERO)).collect();
        assert_eq!(motion_stats(&h), (0.0, 0.0));
        assert_eq!(classify_motion(&h, 10, 1e-3, 0.1), MotionClass::Static);
        assert_eq!(classify_motion(&h[..9], 10, 1e-3, 0.1), MotionClass::Unknown);
    }

    #[test]
    fn constant_velocity_history_trace_matches_closed_form() {
        let (dt, v, k) = (0.02, 1.0, 10usize);
        let h: Vec<HistorySample> = (0..k)
            .map(|i| sample(i as f64 * dt, Vec3::new(v * dt * i as f64, 0.0, 0.0), Vec3::new(v, 0.0, 0.0)))
            .collect();
        let (trace, sigma_v) = motion_stats(&h);
        let expected = (dt * v).powi(2) * ((k * k - 1) as f64) / 12.0;
        assert!((trace - expected).abs() < 1e-15);
        assert!(sigma_v < 1e-12);
        assert!(trace > 1e-3);
        assert_eq!(classify_motion(&h, k, 1e-3, 0.1), MotionClass::Dynamic);
    }

    #[test]
    fn single_jitter_stays_static() {
        let mut h: Vec<HistorySample> = (0..10).map(|i| sample(i as f64 * 0.02, Vec3::ZERO, Vec3::ZERO)).collect();
        h[4].center = Vec3::new(0.02, 0.0, 0.0);
        assert_eq!(classify_motion(&h, 10, 1e-3, 0.1), MotionClass::Static);
    }

    fn cube_cloud(t: f64, center: Vec3) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    pts.push(center + Vec3::new(i as f64, j as f64, k as f64) * 0.1);
                }
            }
        }
        PointCloud::new(t, pts)
    }

    #[test]
    fn lifecycle_confirm_and_delete() {
        let mut tr = LidarTracker::new(LidarParams { voxel: 0.0, ..Default::default() });
        let c = Vec3::new(3.0, 0.0, 0.5);
        let tracks = tr.process(&cube_cloud(0.0, c), &robot()).unwrap();
        assert_eq!(tracks.len(), 1);
        assert!(!tracks[0].confirmed);
        tr.process(&cube_cloud(0.02, c), &robot()).unwrap();
        assert!(!tr.tracks()[0].confirmed);
        tr.process(&cube_cloud(0.04, c), &robot()).unwrap();
        assert!(tr.tracks()[0].confirmed);
        let empty = |t| PointCloud::new(t, vec![]);
        for k in 0..3 {
            tr.process(&empty(0.06 + 0.02 * k as f64), &robot()).unwrap();
            assert_eq!(tr.tracks().len(), 1);
        }
        tr.process(&empty(0.12), &robot()).unwrap();
        assert!(tr.tracks().is_empty());
    }

    #[test]
    fn empty_stream_has_no_tracks() {
        let mut tr = LidarTracker::new(LidarParams::default());
        for k in 0..20 {
            assert!(tr.process(&PointCloud::new(k as f64 * 0.02, vec![]), &robot()).unwrap().is_empty());
        }
    }

    fn noiseless_spec() -> LidarSpec {
        LidarSpec { range_noise: 0.0, dropout: 0.0, ..Default::default() }
    }

    #[test]
    fn approaching_sphere_is_tracked() {
        let r = 0.5;
        let v = Vec3::new(-1.0, 0.0, 0.0);
        let mut world = WorldState::new(
            robot(),
            RobotSpec::default(),
            vec![ObstacleTruth::moving(0, Vec3::new(5.0, 0.5, 0.5), v, r, Trajectory::Linear)],
        );
        let mut tr = LidarTracker::new(LidarParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cmd = crate::control::Command::default();
        let mut ids = std::collections::BTreeSet::new();
        for k in 0..90 {
            let cloud = render_lidar(&world, &noiseless_spec(), &mut rng);
            let truth = world.obstacles[0].position;
            tr.process(&cloud, &world.robot).unwrap();
            let active: Vec<&ObstacleTrack> = tr.tracks().iter().filter(|t| t.is_active()).collect();
            ids.extend(tr.tracks().iter().filter(|t| t.confirmed).map(|t| t.id));
            if k >= 50 {
                assert_eq!(active.len(), 1);
                let t = active[0];
                assert!((t.position() - truth).norm() < r / 2.0, "frame {k}: {:?} vs {truth:?}", t.position());
                // vertical velocity is dominated by rings entering and leaving the target
                let dv = (t.velocity() - v).xy().norm();
                assert!(dv < 0.1, "frame {k}: planar velocity error {dv}");
            }
            world = crate::simworld::step_world(&world, &cmd, 0.02);
        }
        assert_eq!(ids.len(), 1);
    }

    #[test]
    fn two_spheres_keep_distinct_ids() {
        let mut world = WorldState::new(
            robot(),
            RobotSpec::default(),
            vec![
                ObstacleTruth::moving(0, Vec3::new(4.0, 2.5, 0.3), Vec3::new(-0.5, 0.0, 0.0), 0.3, Trajectory::Linear),
                ObstacleTruth::moving(1, Vec3::new(4.0, -2.5, 0.3), Vec3::new(-0.5, 0.0, 0.0), 0.3, Trajectory::Linear),
            ],
        );
        let mut tr = LidarTracker::new(LidarParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cmd = crate::control::Command::default();
        let mut ids_by_side: BTreeMap<bool, u32> = BTreeMap::new();
        for frame in 0..50 {
            let cloud = render_lidar(&world, &noiseless_spec(), &mut rng);
            let tracks = tr.process(&cloud, &world.robot).unwrap();
            if frame >= 3 {
                assert_eq!(tracks.iter().filter(|t| t.confirmed).count(), 2);
                for t in tracks {
                    let side = t.position().y > 0.0;
                    assert_eq!(*ids_by_side.entry(side).or_insert(t.id), t.id);
                }
            }
            world = crate::simworld::step_world(&world, &cmd, 0.02);
        }
    }

    #[test]
    fn out_of_order_frames_rejected() {
        let mut tr = LidarTracker::new(LidarParams::default());
        tr.process(&PointCloud::new(1.0, vec![]), &robot()).unwrap();
        assert!(tr.process(&PointCloud::new(0.5, vec![]), &robot()).is_err());
    }
}
