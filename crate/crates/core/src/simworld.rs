//! Deterministic stepped world: robot kinematics, obstacle trajectories,
//! collision bookkeeping and scenario configuration.

use std::f64::consts::PI;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera_percept::CameraParams;
use crate::control::{Command, ControlGains};
use crate::eval::RaycastParams;
use crate::geometry::{wrap_angle, RobotState, Vec2, Vec3};
use crate::lidar_percept::LidarParams;
use crate::predict::PredictorConfig;
use crate::sensors::{CameraSpec, DetectorSpec, LidarSpec};
use crate::threat::ThreatParams;
use crate::{Error, Result};

pub const GRAVITY: f64 = 9.81;

/// RNG stream used for obstacle spawning; sensors use their own streams.
pub const SPAWN_STREAM: u64 = 0;

/// Closed interval `[lo, hi]`, written as a two-element array in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval(pub f64, pub f64);

impl Interval {
    pub fn lo(&self) -> f64 {
        self.0
    }

    pub fn hi(&self) -> f64 {
        self.1
    }

    pub fn point(v: f64) -> Self {
        Interval(v, v)
    }

    pub fn is_valid(&self) -> bool {
        self.0.is_finite() && self.1.is_finite() && self.0 <= self.1
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.0 && v <= self.1
    }

    /// Uniform sample; a degenerate interval returns `lo` exactly.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.0 == self.1 {
            // keep rng consumption independent of the interval shape
            let _: f64 = rng.random();
            self.0
        } else {
            rng.random_range(self.0..=self.1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleClass {
    Human,
    Ball,
    Stick,
}

impl ObstacleClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObstacleClass::Human => "human",
            ObstacleClass::Ball => "ball",
            ObstacleClass::Stick => "stick",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Trajectory {
    Linear,
    /// Free flight under gravity once launched.
    Ballistic,
    /// Piecewise-linear path at constant speed; continues straight after the
    /// last waypoint.
    Waypoint {
        waypoints: Vec<Vec3>,
        speed: f64,
        next: usize,
    },
    /// Constant velocity until `trigger_time`, then scaled by `factor` once.
    SuddenAcceleration {
        trigger_time: f64,
        factor: f64,
        fired: bool,
    },
}

impl Trajectory {
    pub fn name(&self) -> &'static str {
        match self {
            Trajectory::Linear => "linear",
            Trajectory::Ballistic => "ballistic",
            Trajectory::Waypoint { .. } => "waypoint",
            Trajectory::SuddenAcceleration { .. } => "sudden",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleTruth {
    pub id: u32,
    pub position: Vec3,
    pub velocity: Vec3,
    pub radius: f64,
    pub trajectory: Trajectory,
    pub class: ObstacleClass,
    pub active: bool,
    /// The obstacle holds still until this time, then takes `launch_velocity`.
    pub launch_time: f64,
    pub launch_velocity: Vec3,
    pub launched: bool,
}

impl ObstacleTruth {
    /// An obstacle already in motion at `t = 0`.
    pub fn moving(id: u32, position: Vec3, velocity: Vec3, radius: f64, trajectory: Trajectory) -> Self {
        let class =
            if matches!(trajectory, Trajectory::Ballistic) { ObstacleClass::Ball } else { ObstacleClass::Human };
        Self {
            id,
            position,
            velocity,
            radius,
            trajectory,
            class,
            active: true,
            launch_time: 0.0,
            launch_velocity: velocity,
            launched: true,
        }
    }

    pub fn stationary(id: u32, position: Vec3, radius: f64) -> Self {
        Self::moving(id, position, Vec3::ZERO, radius, Trajectory::Linear)
    }

    fn advance(&mut self, now: f64, dt: f64) {
        if !self.active {
            return;
        }
        if !self.launched {
            if now + 1e-12 < self.launch_time {
                return;
            }
            self.launched = true;
            self.velocity = self.launch_velocity;
        }
        match &mut self.trajectory {
            Trajectory::Linear => self.position += self.velocity * dt,
            Trajectory::Ballistic => {
                // exact for constant acceleration
                self.position += self.velocity * dt - Vec3::new(0.0, 0.0, 0.5 * GRAVITY * dt * dt);
                self.velocity.z -= GRAVITY * dt;
                if self.position.z - self.radius <= 0.0 && self.velocity.z < 0.0 {
                    self.active = false;
                }
            }
            Trajectory::SuddenAcceleration { trigger_time, factor, fired } => {
                if !*fired && now + 1e-12 >= *trigger_time {
                    *fired = true;
                    self.velocity = self.velocity * *factor;
                }
                self.position += self.velocity * dt;
            }
            Trajectory::Waypoint { waypoints, speed, next } => {
                let mut remaining = *speed * dt;
                while remaining > 0.0 && *next < waypoints.len() {
                    let to = waypoints[*next] - self.position;
                    let d = to.norm();
                    if d <= remaining {
                        self.position = waypoints[*next];
                        remaining -= d;
                        *next += 1;
                        if let Some(wp) = waypoints.get(*next) {
                            if let Some(dir) = (*wp - self.position).try_normalize() {
                                self.velocity = dir * *speed;
                            }
                        }
                    } else {
                        let dir = to / d;
                        self.velocity = dir * *speed;
                        self.position += dir * remaining;
                        remaining = 0.0;
                    }
                }
                if remaining > 0.0 {
                    self.position += self.velocity * (remaining / speed.max(1e-12));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSpec {
    pub v_max: f64,
    pub a_max: f64,
    pub omega_max: f64,
    /// Collision radius of the base.
    pub radius: f64,
    /// Height of the base center above the ground.
    pub body_height: f64,
    /// Mass used by the planar work-rate energy surrogate.
    pub mass: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        Self { v_max: 1.5, a_max: 6.0, omega_max: 3.0, radius: 0.3, body_height: 0.3, mass: 15.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryWeights {
    pub linear: f64,
    pub ballistic: f64,
    pub waypoint: f64,
    pub sudden: f64,
}

impl Default for TrajectoryWeights {
    fn default() -> Self {
        Self { linear: 0.4, ballistic: 0.2, waypoint: 0.15, sudden: 0.25 }
    }
}

impl TrajectoryWeights {
    pub fn only_linear() -> Self {
        Self { linear: 1.0, ballistic: 0.0, waypoint: 0.0, sudden: 0.0 }
    }

    fn as_array(&self) -> [f64; 4] {
        [self.linear, self.ballistic, self.waypoint, self.sudden]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpawnSpec {
    pub count: usize,
    /// Approach bearing relative to the robot's initial heading.
    pub bearing: Interval,
    /// Initial horizontal distance from the robot.
    pub range: Interval,
    /// Launch speed (horizontal speed for ballistic obstacles).
    pub speed: Interval,
    pub radius: Interval,
    /// Lateral offset of the aim point from the robot center.
    pub aim_offset: Interval,
    /// Time the obstacle stands still before launching.
    pub launch_delay: Interval,
    pub weights: TrajectoryWeights,
    /// Release height of thrown obstacles.
    pub throw_height: f64,
    /// Horizontal speed of thrown obstacles.
    pub throw_speed: Interval,
    /// Constant-velocity dwell after launch before a sudden acceleration.
    pub sudden_dwell: Interval,
    pub sudden_factor: Interval,
    /// Lateral deviation of the intermediate waypoint.
    pub waypoint_deviation: Interval,
    /// Obstacles at least this large are labelled as humans.
    pub human_min_radius: f64,
    /// Ground obstacles are sped up where needed so that they reach the
    /// aim point no later than this long before the trial ends.
    pub arrival_margin: f64,
}

impl Default for SpawnSpec {
    fn default() -> Self {
        Self {
            count: 1,
            bearing: Interval(-PI, PI),
            range: Interval(4.5, 6.5),
            speed: Interval(1.0, 4.0),
            radius: Interval(0.1, 0.35),
            aim_offset: Interval(-0.3, 0.3),
            launch_delay: Interval(0.4, 1.0),
            weights: TrajectoryWeights::default(),
            throw_height: 1.0,
            throw_speed: Interval(7.0, 10.0),
            sudden_dwell: Interval(0.2, 0.8),
            sudden_factor: Interval(1.5, 3.0),
            waypoint_deviation: Interval(-1.0, 1.0),
            human_min_radius: 0.25,
            arrival_margin: 2.0,
        }
    }
}

/// Everything that determines a trial, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub dt: f64,
    pub duration: f64,
    /// Reaction-time budget; also the forecast horizon used for threat.
    pub reaction_budget: f64,
    pub robot: RobotSpec,
    pub spawn: SpawnSpec,
    pub lidar: LidarSpec,
    pub camera: CameraSpec,
    pub detector: DetectorSpec,
    pub lidar_tracking: LidarParams,
    pub camera_tracking: CameraParams,
    pub prediction: PredictorConfig,
    pub threat: ThreatParams,
    pub control: ControlGains,
    pub raycast: RaycastParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dt: 0.02,
            duration: 6.0,
            reaction_budget: 0.3,
            robot: RobotSpec::default(),
            spawn: SpawnSpec::default(),
            lidar: LidarSpec::default(),
            camera: CameraSpec::default(),
            detector: DetectorSpec::default(),
            lidar_tracking: LidarParams::default(),
            camera_tracking: CameraParams::default(),
            prediction: PredictorConfig::default(),
            threat: ThreatParams::default(),
            control: ControlGains::default(),
            raycast: RaycastParams::default(),
        }
    }
}

fn check(cond: bool, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(what.to_string()))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the canonical JSON encoding, excluding the seed.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Applies a `dotted.key=value` assignment. The value is read as a TOML
    /// literal, falling back to a bare string; the key must already exist.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.trim().to_string()),
        };
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut root;
        for part in key.trim().split('.') {
            slot = slot.get_mut(part).ok_or_else(|| Error::Config(format!("unknown configuration key `{key}`")))?;
        }
        *slot = value;
        let cfg: ScenarioConfig = root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        check(self.dt > 0.0 && self.dt.is_finite(), "dt must be positive")?;
        check(self.duration > 0.0, "duration must be positive")?;
        check(self.reaction_budget >= 0.0, "reaction_budget must be non-negative")?;
        let r = &self.robot;
        check(r.v_max > 0.0 && r.a_max > 0.0 && r.omega_max > 0.0, "robot limits must be positive")?;
        check(r.radius > 0.0 && r.mass > 0.0, "robot radius and mass must be positive")?;
        let s = &self.spawn;
        for (name, iv) in [
            ("spawn.bearing", s.bearing),
            ("spawn.range", s.range),
            ("spawn.speed", s.speed),
            ("spawn.radius", s.radius),
            ("spawn.aim_offset", s.aim_offset),
            ("spawn.launch_delay", s.launch_delay),
            ("spawn.throw_speed", s.throw_speed),
            ("spawn.sudden_dwell", s.sudden_dwell),
            ("spawn.sudden_factor", s.sudden_factor),
            ("spawn.waypoint_deviation", s.waypoint_deviation),
        ] {
            check(iv.is_valid(), &format!("{name} must satisfy lo <= hi"))?;
        }
        check(s.range.lo() > 0.0, "spawn.range must be positive")?;
        check(s.radius.lo() > 0.0, "spawn.radius must be positive")?;
        check(s.speed.lo() >= 0.0, "spawn.speed must be non-negative")?;
        check(s.throw_speed.lo() > 0.0, "spawn.throw_speed must be positive")?;
        check(
            s.arrival_margin >= 0.0 && s.arrival_margin + s.launch_delay.hi() < self.duration,
            "spawn.arrival_margin plus the launch delay must fit in the trial",
        )?;
        check(s.launch_delay.lo() >= 0.0, "spawn.launch_delay must be non-negative")?;
        let w = s.weights.as_array();
        check(
            w.iter().all(|x| *x >= 0.0 && x.is_finite()) && w.iter().sum::<f64>() > 0.0,
            "spawn.weights must be non-negative with a positive sum",
        )?;
        self.lidar.validate()?;
        self.camera.validate()?;
        self.detector.validate()?;
        self.lidar_tracking.validate()?;
        self.camera_tracking.validate()?;
        self.prediction.validate()?;
        self.threat.validate()?;
        self.control.validate()?;
        self.raycast.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    pub step: usize,
    pub robot: RobotState,
    pub robot_spec: RobotSpec,
    pub obstacles: Vec<ObstacleTruth>,
    pub collided: bool,
    /// Acceleration applied to the base during the last step.
    pub last_accel: Vec3,
}

impl WorldState {
    pub fn new(robot: RobotState, robot_spec: RobotSpec, obstacles: Vec<ObstacleTruth>) -> Self {
        let mut w = Self { time: 0.0, step: 0, robot, robot_spec, obstacles, collided: false, last_accel: Vec3::ZERO };
        w.collided = check_collision(&w).collided;
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionCheck {
    pub collided: bool,
    /// Smallest surface-to-surface distance; `+inf` with no active obstacles.
    pub clearance: f64,
    pub nearest: Option<u32>,
}

pub fn check_collision(state: &WorldState) -> CollisionCheck {
    let mut clearance = f64::INFINITY;
    let mut nearest = None;
    for o in state.obstacles.iter().filter(|o| o.active) {
        let c = o.position.distance(state.robot.position) - o.radius - state.robot_spec.radius;
        if c < clearance {
            clearance = c;
            nearest = Some(o.id);
        }
    }
    CollisionCheck { collided: clearance < 0.0, clearance, nearest }
}

/// Samples a scenario. Identical configs give identical worlds.
pub fn spawn_scenario(config: &ScenarioConfig) -> Result<WorldState> {
    config.validate()?;
    let s = &config.spawn;
    let robot_spec = config.robot.clone();
    if s.aim_offset.lo().abs().min(s.aim_offset.hi().abs()) >= s.radius.hi() + robot_spec.radius
        && s.aim_offset.lo() * s.aim_offset.hi() > 0.0
    {
        return Err(Error::Config("aim offsets always miss the robot".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SPAWN_STREAM);
    let robot = RobotState::at(Vec3::new(0.0, 0.0, robot_spec.body_height), 0.0);
    let kinds = WeightedIndex::new(s.weights.as_array()).map_err(|e| Error::Config(e.to_string()))?;

    let mut obstacles = Vec::with_capacity(s.count);
    for id in 0..s.count {
        let bearing = s.bearing.sample(&mut rng);
        let range = s.range.sample(&mut rng);
        let speed = s.speed.sample(&mut rng);
        let radius = s.radius.sample(&mut rng);
        let offset = s.aim_offset.sample(&mut rng);
        let launch = s.launch_delay.sample(&mut rng);
        let kind = kinds.sample(&mut rng);
        // always drawn so every kind consumes the same randomness
        let dwell = s.sudden_dwell.sample(&mut rng);
        let factor = s.sudden_factor.sample(&mut rng);
        let deviation = s.waypoint_deviation.sample(&mut rng);
        let throw_speed = s.throw_speed.sample(&mut rng);

        let heading = wrap_angle(robot.yaw + bearing);
        let start_xy = robot.position.xy() + Vec2::new(heading.cos(), heading.sin()) * range;
        let inward = (robot.position.xy() - start_xy) / range;
        let aim_xy = robot.position.xy() + inward.perp() * offset;
        let height = robot_spec.body_height;
        let mut start = start_xy.extend(height);
        let aim = aim_xy.extend(height);
        let dir = (aim - start).try_normalize().unwrap_or(Vec3::new(inward.x, inward.y, 0.0));

        let budget = config.duration - launch - s.arrival_margin;
        let at_least = |path: f64| speed.max(path / budget);

        let (trajectory, launch_velocity) = match kind {
            0 => (Trajectory::Linear, dir * at_least((aim - start).norm())),
            1 => {
                start.z = s.throw_height.max(radius);
                let horiz = (aim_xy - start_xy).norm();
                let flight = horiz / throw_speed;
                let vz = (aim.z - start.z + 0.5 * GRAVITY * flight * flight) / flight.max(1e-6);
                let h = (aim_xy - start_xy) / horiz.max(1e-12) * throw_speed;
                (Trajectory::Ballistic, Vec3::new(h.x, h.y, vz))
            }
            2 => {
                let mid = (start_xy + aim_xy) * 0.5 + inward.perp() * deviation;
                let exit = aim_xy + inward * 30.0;
                let waypoints = vec![mid.extend(height), aim, exit.extend(height)];
                let first = (waypoints[0] - start).try_normalize().unwrap_or(dir);
                let speed = at_least((waypoints[0] - start).norm() + (aim - waypoints[0]).norm());
                (Trajectory::Waypoint { waypoints, speed, next: 0 }, first * speed)
            }
            _ => (
                Trajectory::SuddenAcceleration { trigger_time: launch + dwell, factor, fired: false },
                dir * at_least((aim - start).norm()),
            ),
        };
        let class = match trajectory {
            Trajectory::Ballistic => ObstacleClass::Ball,
            _ if radius >= s.human_min_radius => ObstacleClass::Human,
            _ => ObstacleClass::Stick,
        };
        obstacles.push(ObstacleTruth {
            id: id as u32,
            position: start,
            velocity: Vec3::ZERO,
            radius,
            trajectory,
            class,
            active: true,
            launch_time: launch,
            launch_velocity,
            launched: false,
        });
    }
    Ok(WorldState::new(robot, robot_spec, obstacles))
}

/// Spawn bearing of an obstacle relative to the robot's initial heading.
pub fn approach_bearing(world: &WorldState, obstacle: &ObstacleTruth) -> f64 {
    let d = obstacle.position - world.robot.position;
    wrap_angle(d.y.atan2(d.x) - world.robot.yaw)
}

/// Advances the world by one step of length `dt`.
pub fn step_world(state: &WorldState, cmd: &Command, dt: f64) -> WorldState {
    let mut next = state.clone();
    let spec = &state.robot_spec;
    let robot = &mut next.robot;

    let v_ref = cmd.v_ref.clamp_norm(spec.v_max);
    let v_now = robot.velocity.xy();
    let accel = ((v_ref - v_now) / dt).clamp_norm(spec.a_max);
    let v_new = (v_now + accel * dt).clamp_norm(spec.v_max);
    robot.velocity = v_new.extend(0.0);
    robot.position += robot.velocity * dt;
    robot.yaw_rate = cmd.yaw_rate_ref.clamp(-spec.omega_max, spec.omega_max);
    robot.yaw = wrap_angle(robot.yaw + robot.yaw_rate * dt);
    next.last_accel = accel.extend(0.0);

    for o in &mut next.obstacles {
        o.advance(state.time, dt);
    }
    next.time = state.time + dt;
    next.step = state.step + 1;
    next.collided = state.collided || check_collision(&next).collided;
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn robot_world(obstacles: Vec<ObstacleTruth>) -> WorldState {
        WorldState::new(RobotState::at(Vec3::new(0.0, 0.0, 0.3), 0.0), RobotSpec::default(), obstacles)
    }

    #[test]
    fn overrides_by_dotted_key() {
        let base = ScenarioConfig::default();
        let c = base.with_override("threat.alpha=0.25").unwrap();
        assert_eq!(c.threat.alpha, 0.25);
        let c = c.with_override("prediction.backend = cv").unwrap();
        assert_eq!(
            c,
            ScenarioConfig {
                prediction: PredictorConfig { backend: crate::predict::Backend::Cv, ..Default::default() },
                threat: c.threat.clone(),
                ..base.clone()
            }
        );
        assert!(matches!(base.with_override("threat.nope=1"), Err(Error::Config(_))));
        assert!(matches!(base.with_override("dt=-1"), Err(Error::Config(_))));
        assert!(matches!(base.with_override("dt"), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_world() {
        let cfg = ScenarioConfig { seed: 42, ..Default::default() };
        let a = spawn_scenario(&cfg).unwrap();
        let b = spawn_scenario(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = spawn_scenario(&cfg.with_seed(43)).unwrap();
        assert_ne!(a.obstacles, c.obstacles);
    }

    #[test]
    fn rear_bearing_range_respected() {
        let mut cfg = ScenarioConfig::default();
        cfg.spawn.count = 6;
        cfg.spawn.bearing = Interval(PI - 0.1, PI + 0.1);
        for seed in 0..20 {
            let w = spawn_scenario(&cfg.with_seed(seed)).unwrap();
            for o in &w.obstacles {
                let b = approach_bearing(&w, o);
                assert!(wrap_angle(b - PI).abs() <= 0.1 + 1e-9, "bearing {b}");
            }
        }
    }

    #[test]
    fn degenerate_speed_range() {
        let mut cfg = ScenarioConfig::default();
        cfg.spawn.count = 5;
        cfg.spawn.speed = Interval::point(1.0);
        cfg.spawn.weights = TrajectoryWeights::only_linear();
        // long enough that the arrival deadline never raises the speed
        cfg.duration = 60.0;
        let w = spawn_scenario(&cfg).unwrap();
        for o in &w.obstacles {
            assert!((o.launch_velocity.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn slow_obstacles_still_arrive_in_time() {
        let mut cfg = ScenarioConfig::default();
        cfg.spawn.speed = Interval(0.1, 0.2);
        cfg.spawn.range = Interval(10.0, 12.0);
        cfg.spawn.aim_offset = Interval::point(0.0);
        cfg.spawn.weights = TrajectoryWeights::only_linear();
        for seed in 0..10 {
            let w = spawn_scenario(&cfg.with_seed(seed)).unwrap();
            let o = &w.obstacles[0];
            let arrival = o.launch_time + (o.position - w.robot.position).norm() / o.launch_velocity.norm();
            assert!(arrival <= cfg.duration - cfg.spawn.arrival_margin + 1e-9, "seed {seed}: {arrival}");
        }
        cfg.spawn.arrival_margin = cfg.duration;
        assert!(matches!(spawn_scenario(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_inverted_intervals() {
        let mut cfg = ScenarioConfig::default();
        cfg.spawn.range = Interval(3.0, 1.0);
        assert!(matches!(spawn_scenario(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn spawned_obstacles_head_for_robot() {
        let mut cfg = ScenarioConfig::default();
        cfg.spawn.aim_offset = Interval::point(0.0);
        cfg.spawn.weights = TrajectoryWeights::only_linear();
        for seed in 0..10 {
            let w = spawn_scenario(&cfg.with_seed(seed)).unwrap();
            let o = &w.obstacles[0];
            let to_robot = (w.robot.position - o.position).try_normalize().unwrap();
            let dir = o.launch_velocity.try_normalize().unwrap();
            assert!((to_robot.dot(dir) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_command_static_world_is_fixed_point() {
        let w = robot_world(vec![ObstacleTruth::stationary(0, Vec3::new(3.0, 0.0, 0.3), 0.2)]);
        let n = step_world(&w, &Command::default(), 0.02);
        assert_eq!(n.robot, w.robot);
        assert_eq!(n.obstacles[0].position, w.obstacles[0].position);
    }

    #[test]
    fn linear_obstacle_euler_step() {
        let o = ObstacleTruth::moving(0, Vec3::new(3.0, 0.0, 0.3), Vec3::new(-1.0, 0.0, 0.0), 0.2, Trajectory::Linear);
        let w = robot_world(vec![o]);
        let n = step_world(&w, &Command::default(), 0.02);
        assert!((n.obstacles[0].position.x - (3.0 - 0.02)).abs() < 1e-15);
    }

    #[test]
    fn ballistic_matches_closed_form() {
        let v0 = Vec3::new(0.5, 0.0, 30.0);
        let p0 = Vec3::new(5.0, 5.0, 200.0);
        let mut w = robot_world(vec![ObstacleTruth::moving(0, p0, v0, 0.1, Trajectory::Ballistic)]);
        let dt = 0.02;
        let prev_vz = w.obstacles[0].velocity.z;
        w = step_world(&w, &Command::default(), dt);
        assert!((w.obstacles[0].velocity.z - (prev_vz - GRAVITY * dt)).abs() < 1e-12);
        for _ in 1..250 {
            w = step_world(&w, &Command::default(), dt);
        }
        let t = w.time;
        let o = &w.obstacles[0];
        assert!((t - 5.0).abs() < 1e-9);
        assert!((o.velocity.z - (v0.z - GRAVITY * t)).abs() < 1e-9);
        let z = p0.z + v0.z * t - 0.5 * GRAVITY * t * t;
        assert!((o.position.z - z).abs() < 1e-6, "error {}", (o.position.z - z).abs());
        assert!((o.position.x - (p0.x + v0.x * t)).abs() < 1e-6);
    }

    #[test]
    fn ballistic_deactivates_on_ground() {
        let mut w = robot_world(vec![ObstacleTruth::moving(
            0,
            Vec3::new(10.0, 0.0, 0.5),
            Vec3::new(0.0, 0.0, -1.0),
            0.1,
            Trajectory::Ballistic,
        )]);
        for _ in 0..50 {
            w = step_world(&w, &Command::default(), 0.02);
        }
        assert!(!w.obstacles[0].active);
    }

    #[test]
    fn sudden_acceleration_and_launch_delay() {
        let mut o = ObstacleTruth::moving(
            0,
            Vec3::new(10.0, 0.0, 0.3),
            Vec3::new(-1.0, 0.0, 0.0),
            0.2,
            Trajectory::SuddenAcceleration { trigger_time: 0.5, factor: 2.0, fired: false },
        );
        o.launched = false;
        o.launch_time = 0.2;
        o.velocity = Vec3::ZERO;
        let mut w = robot_world(vec![o]);
        for _ in 0..10 {
            w = step_world(&w, &Command::default(), 0.02);
        }
        assert!((w.obstacles[0].position.x - 10.0).abs() < 1e-12, "held until launch");
        for _ in 0..30 {
            w = step_world(&w, &Command::default(), 0.02);
        }
        assert!((w.obstacles[0].velocity.x + 2.0).abs() < 1e-12);
    }

    #[test]
    fn waypoints_followed_at_constant_speed() {
        let wps = vec![Vec3::new(1.0, 1.0, 0.3), Vec3::new(2.0, 1.0, 0.3)];
        let mut o = ObstacleTruth::moving(
            0,
            Vec3::new(1.0, 0.0, 0.3),
            Vec3::new(0.0, 1.0, 0.0),
            0.1,
            Trajectory::Waypoint { waypoints: wps, speed: 1.0, next: 0 },
        );
        o.position = Vec3::new(1.0, 0.0, 0.3);
        let mut w = robot_world(vec![o]);
        w.robot.position = Vec3::new(-10.0, -10.0, 0.3);
        for _ in 0..75 {
            w = step_world(&w, &Command::default(), 0.02);
        }
        // 1.5 m of path: 1 m up, 0.5 m along the second leg
        let p = w.obstacles[0].position;
        assert!((p - Vec3::new(1.5, 1.0, 0.3)).norm() < 1e-9, "{p:?}");
    }

    #[test]
    fn robot_respects_limits() {
        let mut w = robot_world(vec![]);
        let cmd = Command { v_ref: Vec2::new(10.0, 0.0), yaw_rate_ref: 9.0, ..Default::default() };
        let n = step_world(&w, &cmd, 0.02);
        assert!((n.robot.speed() - 6.0 * 0.02).abs() < 1e-12);
        assert_eq!(n.robot.yaw_rate, 3.0);
        for _ in 0..100 {
            w = step_world(&w, &cmd, 0.02);
            assert!(w.robot.speed() <= 1.5 + 1e-12);
            assert!(w.robot.yaw_rate.abs() <= 3.0);
        }
    }

    #[test]
    fn clearance_examples() {
        let w = robot_world(vec![ObstacleTruth::stationary(0, Vec3::new(5.0, 0.0, 0.3), 0.2)]);
        let c = check_collision(&w);
        assert!((c.clearance - 4.5).abs() < 1e-12);
        assert!(!c.collided);
        let w = robot_world(vec![ObstacleTruth::stationary(0, Vec3::new(0.0, 0.0, 0.3), 0.2)]);
        let c = check_collision(&w);
        assert!(c.collided && c.clearance < 0.0);
        assert!(w.collided);
        let w = robot_world(vec![]);
        let c = check_collision(&w);
        assert!(!c.collided && c.clearance == f64::INFINITY);
    }

    #[test]
    fn collision_latches() {
        let o = ObstacleTruth::moving(0, Vec3::new(0.6, 0.0, 0.3), Vec3::new(-1.0, 0.0, 0.0), 0.2, Trajectory::Linear);
        let mut w = robot_world(vec![o]);
        let mut seen = false;
        for _ in 0..200 {
            w = step_world(&w, &Command::default(), 0.02);
            seen |= w.collided;
            if seen {
                assert!(w.collided);
            }
        }
        assert!(seen);
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let cfg = ScenarioConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = ScenarioConfig::from_toml_str("seed = 7\n[spawn]\ncount = 2\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.spawn.count, 2);
        assert!(matches!(ScenarioConfig::from_toml_str("dt = -1.0"), Err(Error::Config(_))));
        assert!(matches!(ScenarioConfig::from_toml_str("bogus = 1"), Err(Error::Config(_))));
    }
}
