//! Threat level, time-to-collision, target selection and LiDAR/camera fusion.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThreatParams {
    /// Weight of the closing-speed term against the proximity prior.
    pub alpha: f64,
    /// Exponent of the proximity prior.
    pub gamma: f64,
    /// Distance at which the proximity prior reaches 1.
    pub r_safe: f64,
    /// Distance regulariser.
    pub eps: f64,
    /// Consecutive steps a challenger must dominate before the target switches.
    pub n_switch: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    /// Camera estimates older than this many frames are ignored.
    pub camera_stale_frames: usize,
}

impl Default for ThreatParams {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            gamma: 2.0,
            r_safe: 1.0,
            eps: 1e-3,
            n_switch: 5,
            t_lo: 0.2,
            t_hi: 1.0,
            camera_stale_frames: 3,
        }
    }
}

impl ThreatParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.alpha)
            && self.gamma >= 1.0
            && self.r_safe > 0.0
            && self.eps > 0.0
            && self.t_lo < self.t_hi;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("threat parameters out of range".into()))
        }
    }
}

/// Speed at which the separation shrinks. `dp` points from robot to obstacle
/// and `v_rel` is the obstacle velocity relative to the robot.
pub fn closing_speed(dp: Vec3, v_rel: Vec3) -> f64 {
    match dp.try_normalize() {
        Some(d) => -v_rel.dot(d),
        None => 0.0,
    }
}

/// Distance-normalized closing speed blended with a proximity prior.
pub fn threat(dp: Vec3, v_rel: Vec3, p: &ThreatParams) -> f64 {
    let dist = dp.norm() + p.eps;
    let approach = closing_speed(dp, v_rel).max(0.0) / dist;
    let proximity = (p.r_safe / dist).powf(p.gamma);
    p.alpha * approach + (1.0 - p.alpha) * proximity
}

/// Time to collision under constant velocity; about `|dp| / eps` when the
/// obstacle is not closing.
pub fn ttc(dp: Vec3, v_rel: Vec3, eps: f64) -> f64 {
    dp.norm() / (closing_speed(dp, v_rel).max(0.0) + eps)
}

/// Camera threat replaces the LiDAR value while the camera estimate is fresh.
pub fn fuse(lidar: f64, camera: Option<(f64, usize)>, p: &ThreatParams) -> f64 {
    match camera {
        Some((t, age)) if age <= p.camera_stale_frames => t,
        _ => lidar,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackThreat {
    pub id: u32,
    pub lidar: f64,
    pub camera: Option<f64>,
    pub fused: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ThreatReport {
    pub tracks: Vec<TrackThreat>,
    pub active: Option<u32>,
    pub counter: usize,
}

impl ThreatReport {
    pub fn active_entry(&self) -> Option<&TrackThreat> {
        let id = self.active?;
        self.tracks.iter().find(|t| t.id == id)
    }

    /// Fused threat of the active target, zero without a target.
    pub fn fused(&self) -> f64 {
        self.active_entry().map_or(0.0, |t| t.fused)
    }

    /// LiDAR threat of the active target, zero without a target.
    pub fn lidar(&self) -> f64 {
        self.active_entry().map_or(0.0, |t| t.lidar)
    }
}

/// Target selection with switching persistence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetSelector {
    active: Option<u32>,
    challenger: Option<u32>,
    counter: usize,
}

fn argmax(threats: &[(u32, f64)]) -> Option<(u32, f64)> {
    threats.iter().copied().fold(None, |best: Option<(u32, f64)>, (id, t)| match best {
        Some((bid, bt)) if bt > t || (bt == t && bid < id) => Some((bid, bt)),
        _ => Some((id, t)),
    })
}

impl TargetSelector {
    pub fn active(&self) -> Option<u32> {
        self.active
    }

    pub fn counter(&self) -> usize {
        self.counter
    }

    /// Updates the target from this frame's `(id, threat)` list of candidate
    /// tracks.
    pub fn update(&mut self, threats: &[(u32, f64)], n_switch: usize) -> Option<u32> {
        let current = self.active.and_then(|id| threats.iter().find(|(i, _)| *i == id).copied());
        let Some((cur_id, cur_t)) = current else {
            self.active = argmax(threats).map(|(id, _)| id);
            self.challenger = None;
            self.counter = 0;
            return self.active;
        };
        let above: Vec<(u32, f64)> = threats.iter().copied().filter(|(id, t)| *id != cur_id && *t > cur_t).collect();
        match argmax(&above) {
            Some((id, _)) => {
                if self.challenger == Some(id) {
                    self.counter += 1;
                } else {
                    self.challenger = Some(id);
                    self.counter = 1;
                }
                if self.counter >= n_switch {
                    self.active = Some(id);
                    self.challenger = None;
                    self.counter = 0;
                }
            }
            None => {
                self.challenger = None;
                self.counter = 0;
            }
        }
        self.active
    }
}
