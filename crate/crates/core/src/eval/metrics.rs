//! Per-step logs and trial metrics.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::control::Maneuver;
use crate::geometry::{wrap_angle, Vec2, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec2,
    pub yaw: f64,
    pub yaw_rate: f64,
    /// Acceleration applied during the step that ends at `t`.
    pub accel: Vec2,
    pub beta: f64,
    pub threat_fused: f64,
    pub threat_lidar: f64,
    pub target_id: Option<u32>,
    /// Time to collision of the controller's target estimate.
    pub ttc: Option<f64>,
    pub camera_engaged: bool,
    pub maneuver: Maneuver,
    /// True surface clearance to the nearest obstacle.
    pub clearance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub d_min: f64,
    pub t_closest: f64,
    pub t_trig: Option<f64>,
    pub ttc_at_trig: Option<f64>,
    pub tnl: Option<f64>,
    pub t_rec: Option<f64>,
    /// Planar work surrogate between trigger and recovery, J.
    pub energy: Option<f64>,
}

/// Speed below which the robot counts as settled.
pub const REST_SPEED: f64 = 0.1;

/// Normalized trigger lead.
pub fn tnl(t_closest: f64, t_trig: f64, ttc_at_trig: f64) -> f64 {
    (t_closest - t_trig) / ttc_at_trig
}

/// Sum of `m |a| |v| dt` over the given steps.
pub fn work_surrogate(log: &[StepLog], mass: f64, dt: f64) -> f64 {
    log.iter().map(|s| mass * s.accel.norm() * s.velocity.norm() * dt).sum()
}

pub fn compute_metrics(log: &[StepLog], beta_trigger: f64, mass: f64, dt: f64) -> Metrics {
    let (closest_idx, d_min) = log
        .iter()
        .enumerate()
        .map(|(i, s)| (i, s.clearance))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let t_closest = log.get(closest_idx).map_or(0.0, |s| s.t);
    let trig_idx = log.iter().position(|s| s.beta >= beta_trigger);
    let t_trig = trig_idx.map(|i| log[i].t);
    let ttc_at_trig = trig_idx.and_then(|i| log[i].ttc);
    let tnl = match (t_trig, ttc_at_trig) {
        (Some(t), Some(ttc)) if ttc > 0.0 => Some(tnl(t_closest, t, ttc)),
        _ => None,
    };
    let rec_idx = log
        .iter()
        .enumerate()
        .skip(closest_idx + 1)
        .find(|(_, s)| s.velocity.norm() < REST_SPEED && s.beta < beta_trigger)
        .map(|(i, _)| i);
    let t_rec = rec_idx.map(|i| log[i].t);
    let energy = trig_idx.map(|i| {
        let end = rec_idx.unwrap_or(log.len().saturating_sub(1)).max(i);
        work_surrogate(&log[i..=end], mass, dt)
    });
    Metrics { d_min, t_closest, t_trig, ttc_at_trig, tnl, t_rec, energy }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    Front,
    Left,
    Right,
    Rear,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::Front, Quadrant::Left, Quadrant::Right, Quadrant::Rear];

    /// Quadrant of a bearing measured from the robot heading.
    pub fn of_bearing(bearing: f64) -> Self {
        let b = wrap_angle(bearing);
        if b.abs() <= FRAC_PI_4 {
            Quadrant::Front
        } else if b.abs() > 3.0 * FRAC_PI_4 {
            Quadrant::Rear
        } else if b > 0.0 {
            Quadrant::Left
        } else {
            Quadrant::Right
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Quadrant::Front => "front",
            Quadrant::Left => "left",
            Quadrant::Right => "right",
            Quadrant::Rear => "rear",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(t: f64, beta: f64, clearance: f64, speed: f64) -> StepLog {
        StepLog {
            t,
            position: Vec3::ZERO,
            velocity: Vec2::new(speed, 0.0),
            yaw: 0.0,
            yaw_rate: 0.0,
            accel: Vec2::ZERO,
            beta,
            threat_fused: 0.0,
            threat_lidar: 0.0,
            target_id: None,
            ttc: Some(2.0),
            camera_engaged: false,
            maneuver: Maneuver::None,
            clearance,
        }
    }

    #[test]
    fn tnl_arithmetic() {
        assert!((tnl(2.0, 1.0, 2.0) - 0.5).abs() < 1e-15);
        let log: Vec<StepLog> = (0..=30)
            .map(|k| {
                let t = k as f64 * 0.1;
                step(t, if t >= 1.0 - 1e-9 { 0.8 } else { 0.1 }, (t - 2.0).abs() + 0.2, 0.5)
            })
            .collect();
        let m = compute_metrics(&log, 0.5, 15.0, 0.1);
        assert!((m.t_trig.unwrap() - 1.0).abs() < 1e-9);
        assert!((m.t_closest - 2.0).abs() < 1e-9);
        assert!((m.tnl.unwrap() - 0.5).abs() < 1e-9);
        assert!((m.d_min - 0.2).abs() < 1e-9);
    }

    #[test]
    fn constant_thrust_work() {
        // 10 N at 1 m/s for 2 s
        let log: Vec<StepLog> =
            (0..200).map(|k| StepLog { accel: Vec2::new(1.0, 0.0), ..step(k as f64 * 0.01, 1.0, 1.0, 1.0) }).collect();
        assert!((work_surrogate(&log, 10.0, 0.01) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn no_trigger_means_no_tnl() {
        let log: Vec<StepLog> = (0..10).map(|k| step(k as f64 * 0.1, 0.2, 3.0 - k as f64 * 0.1, 0.0)).collect();
        let m = compute_metrics(&log, 0.5, 15.0, 0.1);
        assert!(m.t_trig.is_none() && m.tnl.is_none() && m.energy.is_none());
    }

    #[test]
    fn quadrants() {
        assert_eq!(Quadrant::of_bearing(0.1), Quadrant::Front);
        assert_eq!(Quadrant::of_bearing(1.5), Quadrant::Left);
        assert_eq!(Quadrant::of_bearing(-1.5), Quadrant::Right);
        assert_eq!(Quadrant::of_bearing(3.1), Quadrant::Rear);
        assert_eq!(Quadrant::of_bearing(-3.1), Quadrant::Rear);
    }
}
