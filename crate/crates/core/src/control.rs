//! Threat-driven control: reorientation toward the most threatening
//! direction, navigation retreat, a scored library of reflex maneuvers and
//! the blend between them.

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, RobotState, Vec2, Vec3};
use crate::simworld::RobotSpec;
use crate::threat::ThreatParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub safe: f64,
    pub dir: f64,
    pub ene: f64,
    pub stab: f64,
    pub rec: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { safe: 5.0, dir: 0.5, ene: 0.1, stab: 0.1, rec: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlGains {
    /// Yaw-rate gain, 1/s.
    pub k_yaw: f64,
    pub yaw_rate_max: f64,
    pub k_retreat_min: f64,
    pub k_retreat_max: f64,
    /// Blend factor at which the reflex is considered triggered.
    pub beta_trigger: f64,
    pub weights: RewardWeights,
    /// Duration each reflex maneuver is commanded in a scoring rollout, s.
    pub reflex_horizon: f64,
    /// Passive coast appended to scoring rollouts so the pass is observed, s.
    pub reflex_tail: f64,
    /// Time-to-collision below which the fixed-rule variant fires, s.
    pub ttc_trigger: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            k_yaw: 2.0,
            yaw_rate_max: 3.0,
            k_retreat_min: 0.2,
            k_retreat_max: 1.2,
            beta_trigger: 0.5,
            weights: RewardWeights::default(),
            reflex_horizon: 0.5,
            reflex_tail: 1.0,
            ttc_trigger: 0.6,
        }
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let ok = self.k_yaw > 0.0
            && self.yaw_rate_max > 0.0
            && self.k_retreat_min >= 0.0
            && self.k_retreat_min <= self.k_retreat_max
            && self.beta_trigger > 0.0
            && self.beta_trigger < 1.0
            && [w.safe, w.dir, w.ene, w.stab, w.rec].iter().all(|x| *x >= 0.0)
            && self.reflex_horizon > 0.0
            && self.reflex_tail >= 0.0
            && self.ttc_trigger >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid control gains".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maneuver {
    #[default]
    None,
    DodgeLeft,
    DodgeRight,
    RetreatBurst,
}

impl Maneuver {
    pub const LIBRARY: [Maneuver; 3] = [Maneuver::DodgeLeft, Maneuver::DodgeRight, Maneuver::RetreatBurst];

    pub fn as_str(&self) -> &'static str {
        match self {
            Maneuver::None => "none",
            Maneuver::DodgeLeft => "dodge_left",
            Maneuver::DodgeRight => "dodge_right",
            Maneuver::RetreatBurst => "retreat_burst",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Command {
    /// Planar velocity reference, world frame.
    pub v_ref: Vec2,
    pub yaw_rate_ref: f64,
    pub beta: f64,
    pub maneuver: Maneuver,
}

/// Monotone blend schedule from threat to `[0, 1]`.
pub fn schedule_g(t: f64, p: &ThreatParams) -> f64 {
    ((t - p.t_lo) / (p.t_hi - p.t_lo)).clamp(0.0, 1.0)
}

/// Yaw-rate reference turning toward `target_dp`, proportional to how much
/// the LiDAR threat exceeds the fused threat.
pub fn reorient(robot: &RobotState, target_dp: Vec3, t_lidar: f64, t_fused: f64, g: &ControlGains) -> f64 {
    let gap = (t_lidar - t_fused).max(0.0);
    if gap == 0.0 {
        return 0.0;
    }
    let phi = target_dp.y.atan2(target_dp.x);
    (g.k_yaw * gap * wrap_angle(phi - robot.yaw)).clamp(-g.yaw_rate_max, g.yaw_rate_max)
}

/// Retreat velocity away from the obstacle with a threat-scheduled speed.
/// `fallback` is used when robot and obstacle coincide horizontally.
pub fn navigate(
    robot: &RobotState,
    obstacle: Vec3,
    threat: f64,
    g: &ControlGains,
    p: &ThreatParams,
    fallback: Option<Vec2>,
) -> Vec2 {
    let away = (robot.position - obstacle).xy().try_normalize().or(fallback).unwrap_or(Vec2::new(1.0, 0.0));
    away * (g.k_retreat_min + (g.k_retreat_max - g.k_retreat_min) * schedule_g(threat, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub robot: Vec3,
    pub robot_velocity: Vec2,
    pub yaw: f64,
    pub accel: Vec2,
    pub obstacle: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub dt: f64,
    pub robot_radius: f64,
    pub obstacle_radius: f64,
    /// Acceleration applied just before the rollout starts.
    pub prev_accel: Vec2,
    pub start: Vec3,
    pub steps: Vec<RolloutStep>,
}

impl Rollout {
    /// Smallest horizontal clearance; height is ignored because forecast
    /// vertical motion is the least reliable part of a track.
    pub fn min_clearance(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| (s.robot - s.obstacle).xy().norm() - self.robot_radius - self.obstacle_radius)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub safe: f64,
    pub dir: f64,
    pub ene: f64,
    pub stab: f64,
    pub rec: f64,
    pub total: f64,
}

/// Composite maneuver score; every term is scaled by the blend schedule
/// value `g` and `clearance_scale` sets the safety term's length scale.
pub fn reward_eval(rollout: &Rollout, w: &RewardWeights, clearance_scale: f64, g: f64) -> Reward {
    let dt = rollout.dt;
    let first_obstacle = rollout.steps.first().map_or(rollout.start, |s| s.obstacle);
    let away0 = (rollout.start - first_obstacle).xy().try_normalize().unwrap_or(Vec2::ZERO);

    let safe = -(-rollout.min_clearance() / clearance_scale).exp();
    let mut toward = 0.0;
    let mut ene = 0.0;
    let mut stab = 0.0;
    let mut prev = rollout.prev_accel;
    for s in &rollout.steps {
        if let Some(d) = (s.obstacle - s.robot).xy().try_normalize() {
            toward += s.robot_velocity.dot(d).max(0.0) * dt;
        }
        ene += s.accel.dot(s.accel) * dt;
        let jerk = s.accel - prev;
        stab += jerk.dot(jerk) * dt;
        prev = s.accel;
    }
    let last = rollout.steps.last();
    let displacement = last.map_or(Vec2::ZERO, |s| (s.robot - rollout.start).xy());
    let dir = -toward + displacement.dot(away0);
    let rec = last.map_or(0.0, |s| {
        let d = (s.obstacle - s.robot).xy();
        let heading = if d.norm() > 0.0 { wrap_angle(d.y.atan2(d.x) - s.yaw).abs() } else { 0.0 };
        -(s.robot_velocity.norm() + heading)
    });
    let raw = w.safe * safe + w.dir * dir + w.ene * (-ene) + w.stab * (-stab) + w.rec * rec;
    Reward { safe, dir, ene: -ene, stab: -stab, rec, total: g * raw }
}

/// Obstacle state the reflex is planned against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleForecast {
    pub position: Vec3,
    pub velocity: Vec3,
    pub radius: f64,
}

/// Unit direction of a maneuver. Left and right are taken while facing the
/// obstacle and are perpendicular to its relative approach.
pub fn maneuver_direction(m: Maneuver, robot: &RobotState, obs: &ObstacleForecast) -> Vec2 {
    let away = (robot.position - obs.position).xy().try_normalize().unwrap_or(Vec2::new(-1.0, 0.0));
    let approach = (obs.velocity - robot.velocity).xy().try_normalize().unwrap_or(away);
    let left = (-approach).perp();
    match m {
        Maneuver::None => Vec2::ZERO,
        Maneuver::DodgeLeft => left,
        Maneuver::DodgeRight => -left,
        Maneuver::RetreatBurst => away,
    }
}

/// Simulates the robot commanding `v_cmd` for the maneuver horizon and then
/// coasting to rest, against a constant-velocity obstacle.
pub fn rollout(
    robot: &RobotState,
    prev_accel: Vec2,
    obs: &ObstacleForecast,
    v_cmd: Vec2,
    spec: &RobotSpec,
    gains: &ControlGains,
    dt: f64,
) -> Rollout {
    let active = (gains.reflex_horizon / dt).round() as usize;
    let total = active + (gains.reflex_tail / dt).round() as usize;
    let mut pos = robot.position;
    let mut vel = robot.velocity.xy();
    let mut steps = Vec::with_capacity(total);
    for k in 0..total {
        let target = if k < active { v_cmd.clamp_norm(spec.v_max) } else { Vec2::ZERO };
        let accel = ((target - vel) / dt).clamp_norm(spec.a_max);
        vel = (vel + accel * dt).clamp_norm(spec.v_max);
        pos += vel.extend(0.0) * dt;
        steps.push(RolloutStep {
            robot: pos,
            robot_velocity: vel,
            yaw: robot.yaw,
            accel,
            obstacle: obs.position + obs.velocity * ((k + 1) as f64 * dt),
        });
    }
    Rollout { dt, robot_radius: spec.radius, obstacle_radius: obs.radius, prev_accel, start: robot.position, steps }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflexChoice {
    pub maneuver: Maneuver,
    pub v_ref: Vec2,
    pub scores: [f64; 3],
}

/// Scores every library maneuver by rollout and keeps the best; ties go to
/// the earlier library entry. `intensity` scales the commanded speed and the
/// reward.
#[allow(clippy::too_many_arguments)]
pub fn reflex_select(
    robot: &RobotState,
    prev_accel: Vec2,
    obs: &ObstacleForecast,
    intensity: f64,
    spec: &RobotSpec,
    gains: &ControlGains,
    threat: &ThreatParams,
    dt: f64,
) -> ReflexChoice {
    let mut scores = [0.0; 3];
    let mut best = 0;
    for (i, m) in Maneuver::LIBRARY.iter().enumerate() {
        // scored at full speed so the ranking does not vanish with intensity
        let dir = maneuver_direction(*m, robot, obs);
        let r = rollout(robot, prev_accel, obs, dir * spec.v_max, spec, gains, dt);
        scores[i] = reward_eval(&r, &gains.weights, threat.r_safe, 1.0).total;
        if scores[i] > scores[best] + 1e-9 {
            best = i;
        }
    }
    let maneuver = Maneuver::LIBRARY[best];
    let v_ref = maneuver_direction(maneuver, robot, obs) * (spec.v_max * intensity);
    ReflexChoice { maneuver, v_ref, scores: scores.map(|s| s * intensity) }
}

/// Convex combination of the navigation and reflex commands.
pub fn blend(nav: &Command, reflex: &Command, beta: f64, beta_trigger: f64) -> Command {
    let b = beta.clamp(0.0, 1.0);
    Command {
        v_ref: nav.v_ref * (1.0 - b) + reflex.v_ref * b,
        yaw_rate_ref: nav.yaw_rate_ref * (1.0 - b) + reflex.yaw_rate_ref * b,
        beta: b,
        maneuver: if b >= beta_trigger { reflex.maneuver } else { Maneuver::None },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{step_world, WorldState};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn robot() -> RobotState {
        RobotState::at(Vec3::new(0.0, 0.0, 0.3), 0.0)
    }

    #[test]
    fn schedule_endpoints() {
        let p = ThreatParams::default();
        assert_eq!(schedule_g(0.0, &p), 0.0);
        assert_eq!(schedule_g(p.t_lo, &p), 0.0);
        assert_eq!(schedule_g(p.t_hi, &p), 1.0);
        assert_eq!(schedule_g(50.0, &p), 1.0);
        assert!((schedule_g((p.t_lo + p.t_hi) / 2.0, &p) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reorient_fades_and_saturates() {
        let g = ControlGains::default();
        let rear = Vec3::new(-3.0, 0.1, 0.0);
        assert_eq!(reorient(&robot(), rear, 0.5, 0.5, &g), 0.0);
        assert_eq!(reorient(&robot(), rear, 0.5, 0.9, &g), 0.0);
        assert_eq!(reorient(&robot(), Vec3::new(3.0, 0.0, 0.0), 1.0, 0.0, &g), 0.0);
        for k in 0..72 {
            let yaw = -PI + k as f64 * PI / 36.0 + 0.01;
            let r = RobotState { yaw: wrap_angle(yaw), ..robot() };
            let err = wrap_angle(rear.y.atan2(rear.x) - r.yaw);
            let w = reorient(&r, rear, 0.8, 0.1, &g);
            assert!(w.abs() <= g.yaw_rate_max);
            assert_eq!(w.signum(), err.signum());
        }
    }

    #[test]
    fn navigate_speed_bounds_and_direction() {
        let g = ControlGains::default();
        let p = ThreatParams::default();
        let north = Vec3::new(0.0, 2.0, 0.3);
        let v = navigate(&robot(), north, 0.0, &g, &p, None);
        assert!((v.norm() - g.k_retreat_min).abs() < 1e-12);
        assert!(v.y < 0.0 && v.x.abs() < 1e-12);
        let v = navigate(&robot(), north, 5.0, &g, &p, None);
        assert!((v.norm() - g.k_retreat_max).abs() < 1e-12);
        let v = navigate(&robot(), robot().position, 0.0, &g, &p, Some(Vec2::new(0.0, 1.0)));
        assert!((v - Vec2::new(0.0, g.k_retreat_min)).norm() < 1e-12);
    }

    fn still_rollout(obstacle: Vec3, n: usize) -> Rollout {
        let steps = (0..n)
            .map(|_| RolloutStep {
                robot: Vec3::new(0.0, 0.0, 0.3),
                robot_velocity: Vec2::ZERO,
                yaw: 0.0,
                accel: Vec2::ZERO,
                obstacle,
            })
            .collect();
        Rollout {
            dt: 0.02,
            robot_radius: 0.3,
            obstacle_radius: 0.2,
            prev_accel: Vec2::ZERO,
            start: Vec3::new(0.0, 0.0, 0.3),
            steps,
        }
    }

    #[test]
    fn null_action_terms_vanish() {
        let r = reward_eval(&still_rollout(Vec3::new(30.0, 0.0, 0.3), 25), &RewardWeights::default(), 1.0, 1.0);
        assert_eq!(r.dir, 0.0);
        assert_eq!(r.ene, 0.0);
        assert_eq!(r.stab, 0.0);
    }

    #[test]
    fn safety_term_monotone_in_clearance() {
        let w = RewardWeights::default();
        let near = reward_eval(&still_rollout(Vec3::new(1.0, 0.0, 0.3), 10), &w, 1.0, 1.0);
        let far = reward_eval(&still_rollout(Vec3::new(2.0, 0.0, 0.3), 10), &w, 1.0, 1.0);
        assert!(near.safe < far.safe);
    }

    #[test]
    fn zero_schedule_zeroes_reward() {
        let r = reward_eval(&still_rollout(Vec3::new(1.0, 0.0, 0.3), 10), &RewardWeights::default(), 1.0, 0.0);
        assert_eq!(r.total, 0.0);
    }

    fn select(obs: &ObstacleForecast, intensity: f64) -> ReflexChoice {
        reflex_select(
            &robot(),
            Vec2::ZERO,
            obs,
            intensity,
            &RobotSpec::default(),
            &ControlGains::default(),
            &ThreatParams::default(),
            0.02,
        )
    }

    #[test]
    fn head_on_tie_goes_left() {
        let obs =
            ObstacleForecast { position: Vec3::new(3.0, 0.0, 0.3), velocity: Vec3::new(-3.0, 0.0, 0.0), radius: 0.2 };
        let c = select(&obs, 1.0);
        assert!((c.scores[0] - c.scores[1]).abs() < 1e-9);
        assert!(c.scores[0] > c.scores[2]);
        assert_eq!(c.maneuver, Maneuver::DodgeLeft);
        assert!(c.v_ref.y > 0.0);
    }

    #[test]
    fn obstacle_passing_on_the_left_sends_robot_right() {
        let obs =
            ObstacleForecast { position: Vec3::new(3.0, 0.25, 0.3), velocity: Vec3::new(-3.0, 0.0, 0.0), radius: 0.2 };
        let c = select(&obs, 1.0);
        assert!(c.v_ref.y < 0.0, "{c:?}");
    }

    #[test]
    fn zero_intensity_gives_zero_reflex_speed() {
        let obs =
            ObstacleForecast { position: Vec3::new(3.0, 0.0, 0.3), velocity: Vec3::new(-0.1, 0.0, 0.0), radius: 0.2 };
        assert_eq!(select(&obs, 0.0).v_ref.norm(), 0.0);
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let nav = Command { v_ref: Vec2::new(1.0, 0.0), yaw_rate_ref: 0.4, ..Default::default() };
        let reflex =
            Command { v_ref: Vec2::new(0.0, 1.5), yaw_rate_ref: 0.0, beta: 0.0, maneuver: Maneuver::DodgeLeft };
        let c = blend(&nav, &reflex, 0.0, 0.5);
        assert_eq!((c.v_ref, c.yaw_rate_ref, c.maneuver), (nav.v_ref, 0.4, Maneuver::None));
        let c = blend(&nav, &reflex, 1.0, 0.5);
        assert_eq!((c.v_ref, c.maneuver), (reflex.v_ref, Maneuver::DodgeLeft));
        let c = blend(&nav, &reflex, 0.5, 0.5);
        assert!((c.v_ref - Vec2::new(0.5, 0.75)).norm() < 1e-12);
    }

    #[test]
    fn reorientation_converges_on_rear_target() {
        let g = ControlGains::default();
        let target = Vec3::new(-3.0, 0.2, 0.3);
        let mut w = WorldState::new(robot(), RobotSpec::default(), vec![]);
        let mut prev = f64::INFINITY;
        let mut reached = None;
        for k in 0..150 {
            let dp = target - w.robot.position;
            let err = wrap_angle(dp.y.atan2(dp.x) - w.robot.yaw).abs();
            assert!(err <= prev + 1e-12);
            prev = err;
            if err < 0.05 && reached.is_none() {
                reached = Some(k as f64 * 0.02);
            }
            let cmd = Command { yaw_rate_ref: reorient(&w.robot, dp, 1.5, 0.0, &g), ..Default::default() };
            w = step_world(&w, &cmd, 0.02);
        }
        assert!(reached.unwrap() <= 2.0);
    }

    proptest! {
        #[test]
        fn blend_is_convex(ax in -2.0..2.0f64, ay in -2.0..2.0f64, bx in -2.0..2.0f64, by in -2.0..2.0f64, beta in 0.0..=1.0f64) {
            let nav = Command { v_ref: Vec2::new(ax, ay), ..Default::default() };
            let reflex = Command { v_ref: Vec2::new(bx, by), ..Default::default() };
            let c = blend(&nav, &reflex, beta, 0.5);
            prop_assert!(c.v_ref.norm() <= nav.v_ref.norm().max(reflex.v_ref.norm()) + 1e-12);
        }
    }
}
