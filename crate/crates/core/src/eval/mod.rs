//! Closed-loop trials, metrics, batches, the reactive baseline and file
//! formats.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera_percept::{CameraObstacle, CameraTracker};
use crate::control::{blend, navigate, reflex_select, reorient, schedule_g, Command, Maneuver, ObstacleForecast};
use crate::geometry::{PointCloud, RobotState, Vec2, Vec3};
use crate::lidar_percept::{roi_filter, LidarTracker, ObstacleTrack};
use crate::predict::{predict, Backend, PredictorConfig, Sample};
use crate::sensors::{render_depth, render_lidar, synthetic_detector, Detection2D};
use crate::simworld::{approach_bearing, check_collision, spawn_scenario, step_world, ScenarioConfig, WorldState};
use crate::threat::{fuse, threat, ttc, TargetSelector, ThreatParams, ThreatReport, TrackThreat};
use crate::{Error, Result};

pub mod batch;
pub mod io;
pub mod metrics;

pub use batch::{run_batch, BatchReport, Stat};
pub use metrics::{compute_metrics, Metrics, Quadrant, StepLog};

const LIDAR_STREAM: u64 = 1;
const DEPTH_STREAM: u64 = 2;
const DETECTOR_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoPrediction,
    NoReorient,
    NoThreat,
    RaycastBaseline,
    LidarOnly,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoPrediction,
        Variant::NoReorient,
        Variant::NoThreat,
        Variant::RaycastBaseline,
        Variant::LidarOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPrediction => "no_prediction",
            Variant::NoReorient => "no_reorient",
            Variant::NoThreat => "no_threat",
            Variant::RaycastBaseline => "raycast_baseline",
            Variant::LidarOnly => "lidar_only",
        }
    }

    fn uses_camera(&self) -> bool {
        !matches!(self, Variant::RaycastBaseline | Variant::LidarOnly)
    }

    fn reorients(&self) -> bool {
        !matches!(self, Variant::NoReorient | Variant::RaycastBaseline | Variant::LidarOnly)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaycastParams {
    /// Speed per unit of mean inverse distance, m^2/s.
    pub gain: f64,
    /// Only points closer than this repel the robot.
    pub influence_radius: f64,
}

impl Default for RaycastParams {
    fn default() -> Self {
        Self { gain: 2.0, influence_radius: 3.0 }
    }
}

impl RaycastParams {
    pub fn validate(&self) -> Result<()> {
        if self.gain >= 0.0 && self.influence_radius > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("invalid raycast parameters".into()))
        }
    }
}

/// Repulsive potential field over raw points: the mean of
/// `(p_robot - p_i) / |p_robot - p_i|^2` over nearby points, scaled by the
/// gain and capped at `v_max`.
pub fn raycast_baseline(cloud: &PointCloud, robot: &RobotState, p: &RaycastParams, v_max: f64) -> Command {
    let mut sum = Vec2::ZERO;
    let mut n = 0usize;
    for q in &cloud.points {
        let d = (robot.position - *q).xy();
        let dist = d.norm();
        if dist > 1e-9 && dist <= p.influence_radius {
            sum = sum + d / (dist * dist);
            n += 1;
        }
    }
    let v_ref = if n == 0 { Vec2::ZERO } else { (sum / n as f64 * p.gain).clamp_norm(v_max) };
    Command { v_ref, ..Default::default() }
}

/// Everything the pipeline believes about its current target.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TargetView {
    /// LiDAR estimate extrapolated to the current time; the camera only
    /// contributes through the fused threat.
    lidar: ObstacleForecast,
    camera_threat: Option<f64>,
}

/// An obstacle estimate now and one reaction budget ahead.
#[derive(Debug, Clone, Copy)]
struct Estimate {
    now: ObstacleForecast,
    ahead: ObstacleForecast,
}

/// Threat of an estimate: the larger of the current and the forecast
/// threat, so an obstacle that the forecast already carries past the robot
/// still counts until it has actually gone by.
fn estimate_threat(e: &Estimate, robot: &RobotState, p: &ThreatParams) -> f64 {
    let at = |f: &ObstacleForecast| threat(f.position - robot.position, f.velocity - robot.velocity, p);
    at(&e.now).max(at(&e.ahead))
}

/// Perception, threat and control state for one trial.
pub struct Pipeline {
    pub variant: Variant,
    config: ScenarioConfig,
    lidar: LidarTracker,
    camera: CameraTracker,
    selector: TargetSelector,
    camera_memory: BTreeMap<u32, (CameraObstacle, usize)>,
    tracks: Vec<ObstacleTrack>,
    frame: usize,
    last_away: Option<Vec2>,
    rng_lidar: ChaCha8Rng,
    rng_depth: ChaCha8Rng,
    rng_detector: ChaCha8Rng,
    external_detections: Option<Vec<Detection2D>>,
    recording: bool,
    pub last_cloud: Option<PointCloud>,
    pub last_detections: Vec<Detection2D>,
    pub last_report: ThreatReport,
    /// Every scan taken, when recording.
    pub recorded_clouds: Vec<PointCloud>,
    /// Every detection produced or consumed, when recording.
    pub recorded_detections: Vec<Detection2D>,
}

/// Step diagnostics returned alongside the command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub threat_fused: f64,
    pub threat_lidar: f64,
    pub target_id: Option<u32>,
    pub ttc: Option<f64>,
    pub camera_engaged: bool,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl Pipeline {
    pub fn new(config: &ScenarioConfig, variant: Variant) -> Self {
        Self {
            variant,
            config: config.clone(),
            lidar: LidarTracker::new(config.lidar_tracking.clone()),
            camera: CameraTracker::new(config.camera_tracking.clone()),
            selector: TargetSelector::default(),
            camera_memory: BTreeMap::new(),
            tracks: Vec::new(),
            frame: 0,
            last_away: None,
            rng_lidar: stream(config.seed, LIDAR_STREAM),
            rng_depth: stream(config.seed, DEPTH_STREAM),
            rng_detector: stream(config.seed, DETECTOR_STREAM),
            external_detections: None,
            recording: false,
            last_cloud: None,
            last_detections: Vec::new(),
            last_report: ThreatReport::default(),
            recorded_clouds: Vec::new(),
            recorded_detections: Vec::new(),
        }
    }

    /// LiDAR tracks after the most recent scan.
    pub fn lidar_tracks(&self) -> &[ObstacleTrack] {
        &self.tracks
    }

    /// Keeps every scan and detection for later replay.
    pub fn recording(mut self) -> Self {
        self.recording = true;
        self
    }

    /// Replaces the synthetic detector with a recorded detection stream;
    /// detections are consumed by matching their time to the frame time.
    pub fn with_external_detections(mut self, dets: Vec<Detection2D>) -> Self {
        self.external_detections = Some(dets);
        self
    }

    fn predictor(&self) -> PredictorConfig {
        let mut p = self.config.prediction.clone();
        if self.variant == Variant::NoPrediction {
            p.backend = Backend::Identity;
        }
        p
    }

    fn lidar_estimate(&self, track: &ObstacleTrack, now: f64) -> Result<Estimate> {
        let window: Vec<Sample> =
            track.history.iter().map(|h| Sample { position: h.position, velocity: h.velocity, time: h.time }).collect();
        let lag = now - window.last().map_or(now, |s| s.time);
        let cfg = self.predictor();
        let at = |h: f64| -> Result<ObstacleForecast> {
            let f = predict(&window, h, &cfg)?;
            Ok(ObstacleForecast { position: f.position, velocity: f.velocity, radius: track.radius })
        };
        Ok(Estimate { now: at(lag)?, ahead: at(lag + self.config.reaction_budget)? })
    }

    fn camera_estimate(&self, cam: &CameraObstacle, lidar_velocity: Vec3, now: f64) -> Estimate {
        let velocity = if cam.velocity_valid { cam.velocity } else { lidar_velocity };
        let at = |h: f64| ObstacleForecast { position: cam.position + velocity * h, velocity, radius: cam.radius };
        match self.predictor().backend {
            Backend::Identity => Estimate { now: at(0.0), ahead: at(0.0) },
            _ => {
                let lag = now - cam.time;
                Estimate { now: at(lag), ahead: at(lag + self.config.reaction_budget) }
            }
        }
    }

    fn perceive(&mut self, world: &WorldState) -> Result<()> {
        let period = self.config.lidar.period_steps.max(1);
        if self.frame.is_multiple_of(period) {
            let cloud = render_lidar(world, &self.config.lidar, &mut self.rng_lidar);
            if self.variant != Variant::RaycastBaseline {
                self.tracks = self.lidar.process(&cloud, &world.robot)?.to_vec();
            }
            if self.recording {
                self.recorded_clouds.push(cloud.clone());
            }
            self.last_cloud = Some(cloud);
        }
        if !self.variant.uses_camera() {
            return Ok(());
        }
        let cam = self.config.camera.model(&world.robot);
        let dets = match &self.external_detections {
            Some(all) => {
                let half = self.config.dt / 2.0;
                all.iter().filter(|d| (d.time - world.time).abs() <= half).cloned().collect()
            }
            None => synthetic_detector(world, &cam, &self.config.detector, &mut self.rng_detector),
        };
        let depth = render_depth(world, &cam, &self.config.camera, &mut self.rng_depth);
        for obs in self.camera.process(&dets, &depth, &cam, &self.tracks) {
            if let Some(id) = obs.lidar_id {
                self.camera_memory.insert(id, (obs, self.frame));
            }
        }
        let alive: Vec<u32> = self.tracks.iter().map(|t| t.id).collect();
        self.camera_memory.retain(|id, _| alive.contains(id));
        if self.recording {
            self.recorded_detections.extend(dets.iter().cloned());
        }
        self.last_detections = dets;
        Ok(())
    }

    fn assess(&mut self, world: &WorldState) -> Result<(ThreatReport, Option<TargetView>)> {
        let robot = &world.robot;
        let p = &self.config.threat;
        let mut entries = Vec::new();
        let mut views = BTreeMap::new();
        for t in self.tracks.iter().filter(|t| t.is_active()) {
            let lf = self.lidar_estimate(t, world.time)?;
            let t_lidar = estimate_threat(&lf, robot, p);
            let fresh = self
                .camera_memory
                .get(&t.id)
                .map(|(c, seen)| (*c, self.frame - seen))
                .filter(|(_, age)| *age <= p.camera_stale_frames);
            let t_cam = fresh.map(|(c, age)| {
                let cf = self.camera_estimate(&c, t.velocity(), world.time);
                (estimate_threat(&cf, robot, p), age)
            });
            entries.push(TrackThreat { id: t.id, lidar: t_lidar, camera: t_cam.map(|x| x.0), fused: t_lidar });
            views.insert(t.id, (lf, t_cam));
        }
        let candidates: Vec<(u32, f64)> = entries.iter().map(|e| (e.id, e.lidar)).collect();
        let active = self.selector.update(&candidates, p.n_switch);
        let mut target = None;
        for e in &mut entries {
            let (lf, t_cam) = views[&e.id];
            if Some(e.id) == active {
                e.fused = fuse(e.lidar, t_cam, p);
                target = Some(TargetView { lidar: lf.now, camera_threat: t_cam.map(|x| x.0) });
            }
        }
        let report = ThreatReport { tracks: entries, active, counter: self.selector.counter() };
        Ok((report, target))
    }

    /// Runs perception and control for the current world state.
    pub fn step(&mut self, world: &WorldState) -> Result<(Command, StepInfo)> {
        self.perceive(world).map_err(|e| e.at_frame(self.frame))?;
        let spec = &world.robot_spec;
        let gains = self.config.control.clone();
        let tp = self.config.threat.clone();
        let robot = world.robot;

        let out = if self.variant == Variant::RaycastBaseline {
            let roi = match &self.last_cloud {
                Some(c) => roi_filter(c, &robot, &self.config.lidar_tracking),
                None => PointCloud::new(world.time, Vec::new()),
            };
            let cmd = raycast_baseline(&roi, &robot, &self.config.raycast, spec.v_max);
            let info =
                StepInfo { threat_fused: 0.0, threat_lidar: 0.0, target_id: None, ttc: None, camera_engaged: false };
            (cmd, info)
        } else {
            let (report, target) = self.assess(world).map_err(|e| e.at_frame(self.frame))?;
            let t_fused = report.fused();
            let t_lidar = report.lidar();
            let cmd_info = match target {
                None => (
                    Command::default(),
                    StepInfo {
                        threat_fused: 0.0,
                        threat_lidar: 0.0,
                        target_id: None,
                        ttc: None,
                        camera_engaged: false,
                    },
                ),
                Some(view) => {
                    let est = view.lidar;
                    let dp = est.position - robot.position;
                    let ttc_est = ttc(dp, est.velocity - robot.velocity, tp.eps);
                    let yaw_rate = if self.variant.reorients() {
                        // turning fades once the camera threat covers the LiDAR threat
                        reorient(
                            &robot,
                            view.lidar.position - robot.position,
                            t_lidar,
                            view.camera_threat.unwrap_or(0.0),
                            &gains,
                        )
                    } else {
                        0.0
                    };
                    let (beta, intensity) = if self.variant == Variant::NoThreat {
                        let fire = if ttc_est < gains.ttc_trigger { 1.0 } else { 0.0 };
                        (fire, 1.0)
                    } else {
                        let g = schedule_g(t_fused, &tp);
                        (g, g)
                    };
                    let nav_v = if t_fused > tp.t_lo {
                        let v = navigate(&robot, est.position, t_fused, &gains, &tp, self.last_away);
                        self.last_away = v.try_normalize().or(self.last_away);
                        v
                    } else {
                        Vec2::ZERO
                    };
                    let choice = reflex_select(
                        &robot,
                        world.last_accel.xy(),
                        &est,
                        intensity,
                        spec,
                        &gains,
                        &tp,
                        self.config.dt,
                    );
                    let nav = Command { v_ref: nav_v, yaw_rate_ref: yaw_rate, beta: 0.0, maneuver: Maneuver::None };
                    let reflex =
                        Command { v_ref: choice.v_ref, yaw_rate_ref: yaw_rate, beta: 1.0, maneuver: choice.maneuver };
                    let cmd = blend(&nav, &reflex, beta, gains.beta_trigger);
                    let info = StepInfo {
                        threat_fused: t_fused,
                        threat_lidar: t_lidar,
                        target_id: report.active,
                        ttc: Some(ttc_est),
                        camera_engaged: view.camera_threat.is_some(),
                    };
                    (cmd, info)
                }
            };
            self.last_report = report;
            cmd_info
        };
        self.frame += 1;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub variant: Variant,
    pub success: bool,
    pub collided: bool,
    pub d_min: f64,
    pub t_trig: Option<f64>,
    pub t_closest: f64,
    pub t_rec: Option<f64>,
    pub ttc_at_trig: Option<f64>,
    pub tnl: Option<f64>,
    /// Surrogate joules.
    pub energy: Option<f64>,
    pub bearing: f64,
    pub quadrant: Quadrant,
    pub trajectory: String,
    #[serde(skip)]
    pub log: Vec<StepLog>,
}

/// Runs the closed loop from a given initial world.
pub fn simulate(config: &ScenarioConfig, variant: Variant, world: WorldState) -> Result<TrialResult> {
    simulate_with(config, &mut Pipeline::new(config, variant), world)
}

/// Runs the closed loop with a caller-owned pipeline, which can be inspected
/// afterwards.
pub fn simulate_with(config: &ScenarioConfig, pipeline: &mut Pipeline, mut world: WorldState) -> Result<TrialResult> {
    let variant = pipeline.variant;
    let first = world.obstacles.first();
    let bearing = first.map_or(0.0, |o| approach_bearing(&world, o));
    let trajectory = first.map_or("none", |o| o.trajectory.name()).to_string();

    let mut log = Vec::with_capacity(config.steps() + 1);
    let push = |w: &WorldState, cmd: &Command, info: &StepInfo, log: &mut Vec<StepLog>| {
        log.push(StepLog {
            t: w.time,
            position: w.robot.position,
            velocity: w.robot.velocity.xy(),
            yaw: w.robot.yaw,
            yaw_rate: w.robot.yaw_rate,
            accel: w.last_accel.xy(),
            beta: cmd.beta,
            threat_fused: info.threat_fused,
            threat_lidar: info.threat_lidar,
            target_id: info.target_id,
            ttc: info.ttc,
            camera_engaged: info.camera_engaged,
            maneuver: cmd.maneuver,
            clearance: check_collision(w).clearance,
        });
    };
    for _ in 0..config.steps() {
        let (cmd, info) = pipeline.step(&world)?;
        push(&world, &cmd, &info, &mut log);
        world = step_world(&world, &cmd, config.dt);
        if !world.robot.position.is_finite() {
            return Err(Error::numerical("robot state diverged").at_frame(world.step));
        }
    }
    let m = compute_metrics(&log, config.control.beta_trigger, config.robot.mass, config.dt);
    // the final state is reached after the last command; its clearance counts too
    let final_clear = check_collision(&world).clearance;
    let (d_min, t_closest) = if final_clear < m.d_min { (final_clear, world.time) } else { (m.d_min, m.t_closest) };
    let collided = world.collided || log.iter().any(|s| s.clearance < 0.0);
    Ok(TrialResult {
        seed: config.seed,
        variant,
        success: !collided && m.t_rec.is_some(),
        collided,
        d_min,
        t_trig: m.t_trig,
        t_closest,
        t_rec: m.t_rec,
        ttc_at_trig: m.ttc_at_trig,
        tnl: m.tnl,
        energy: m.energy,
        bearing,
        quadrant: Quadrant::of_bearing(bearing),
        trajectory,
        log,
    })
}

/// Spawns the scenario for `config.seed` and runs it.
pub fn run_trial(config: &ScenarioConfig, variant: Variant) -> Result<TrialResult> {
    let world = spawn_scenario(config)?;
    simulate(config, variant, world)
}
