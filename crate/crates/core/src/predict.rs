//! Short-horizon obstacle forecasting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Constant velocity from the newest sample.
    Cv,
    /// Per-axis polynomial least squares over the window.
    Lsq,
    /// Returns the newest sample unchanged; used to disable prediction.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub backend: Backend,
    /// Polynomial degree for the least-squares backend (1 or 2).
    pub degree: usize,
    pub window: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self { backend: Backend::Lsq, degree: 1, window: 10 }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.degree) || self.window == 0 {
            return Err(Error::Config("prediction.degree must be 1 or 2 and window > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub position: Vec3,
    pub velocity: Vec3,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub position: Vec3,
    pub velocity: Vec3,
    pub horizon: f64,
}

/// Forecasts the state `horizon` seconds past the newest sample. Only the
/// last `config.window` samples are used.
pub fn predict(window: &[Sample], horizon: f64, config: &PredictorConfig) -> Result<Forecast> {
    let last = *window.last().ok_or(Error::EmptyWindow)?;
    let window = &window[window.len().saturating_sub(config.window)..];
    match config.backend {
        Backend::Identity => Ok(Forecast { position: last.position, velocity: last.velocity, horizon }),
        Backend::Cv => {
            Ok(Forecast { position: last.position + last.velocity * horizon, velocity: last.velocity, horizon })
        }
        Backend::Lsq if window.len() < 2 => {
            predict(window, horizon, &PredictorConfig { backend: Backend::Cv, ..*config })
        }
        Backend::Lsq => {
            let degree = config.degree.min(window.len() - 1);
            let coeffs = fit_polynomial(window, last.time, degree)?;
            let eval = |c: &[f64; 3]| c[0] + c[1] * horizon + c[2] * horizon * horizon;
            let slope = |c: &[f64; 3]| c[1] + 2.0 * c[2] * horizon;
            Ok(Forecast {
                position: Vec3::new(eval(&coeffs[0]), eval(&coeffs[1]), eval(&coeffs[2])),
                velocity: Vec3::new(slope(&coeffs[0]), slope(&coeffs[1]), slope(&coeffs[2])),
                horizon,
            })
        }
    }
}

/// Per-axis coefficients `[c0, c1, c2]` in time measured from `t0`.
fn fit_polynomial(window: &[Sample], t0: f64, degree: usize) -> Result<[[f64; 3]; 3]> {
    let n = window.len();
    let a = DMatrix::from_fn(n, degree + 1, |i, j| (window[i].time - t0).powi(j as i32));
    let svd = a.svd(true, true);
    let mut out = [[0.0; 3]; 3];
    for (axis, coeffs) in out.iter_mut().enumerate() {
        let b = DVector::from_iterator(
            n,
            window.iter().map(|s| match axis {
                0 => s.position.x,
                1 => s.position.y,
                _ => s.position.z,
            }),
        );
        let x = svd.solve(&b, 1e-12).map_err(|e| Error::numerical(e.to_string()))?;
        for (k, c) in x.iter().enumerate() {
            coeffs[k] = *c;
        }
    }
    if out.iter().flatten().all(|c| c.is_finite()) {
        Ok(out)
    } else {
        Err(Error::numerical("non-finite forecast coefficients"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linear_window(p0: Vec3, v: Vec3, n: usize, dt: f64) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                Sample { position: p0 + v * t, velocity: v, time: t }
            })
            .collect()
    }

    #[test]
    fn cv_extrapolates() {
        let w = [Sample { position: Vec3::ZERO, velocity: Vec3::new(1.0, 0.0, 0.0), time: 0.0 }];
        let cfg = PredictorConfig { backend: Backend::Cv, ..Default::default() };
        let f = predict(&w, 0.1, &cfg).unwrap();
        assert_eq!(f.position, Vec3::new(0.1, 0.0, 0.0));
        assert_eq!(f.velocity, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn lsq_matches_cv_on_linear_motion() {
        let w = linear_window(Vec3::new(1.0, -2.0, 0.3), Vec3::new(-1.5, 0.5, 0.0), 10, 0.02);
        let cv = predict(&w, 0.1, &PredictorConfig { backend: Backend::Cv, ..Default::default() }).unwrap();
        let lsq = predict(&w, 0.1, &PredictorConfig::default()).unwrap();
        assert!((cv.position - lsq.position).norm() < 1e-9);
        assert!((cv.velocity - lsq.velocity).norm() < 1e-9);
    }

    #[test]
    fn quadratic_fit_is_exact_on_ballistic_data() {
        let g = 9.81;
        let (z0, vz0) = (1.0, 2.0);
        let w: Vec<Sample> = (0..10)
            .map(|i| {
                let t = 0.5 + i as f64 * 0.02;
                Sample {
                    position: Vec3::new(t, 0.0, z0 + vz0 * t - 0.5 * g * t * t),
                    velocity: Vec3::new(1.0, 0.0, vz0 - g * t),
                    time: t,
                }
            })
            .collect();
        let cfg = PredictorConfig { degree: 2, ..Default::default() };
        let f = predict(&w, 0.1, &cfg).unwrap();
        let t = w.last().unwrap().time + 0.1;
        assert!((f.position.z - (z0 + vz0 * t - 0.5 * g * t * t)).abs() < 1e-6);
        assert!((f.velocity.z - (vz0 - g * t)).abs() < 1e-6);
    }

    #[test]
    fn empty_window_is_an_error() {
        assert!(matches!(predict(&[], 0.1, &PredictorConfig::default()), Err(Error::EmptyWindow)));
    }

    #[test]
    fn degenerate_window_is_stationary() {
        let s = Sample { position: Vec3::new(2.0, 1.0, 0.5), velocity: Vec3::ZERO, time: 0.0 };
        let w: Vec<Sample> = (0..5).map(|i| Sample { time: i as f64 * 0.02, ..s }).collect();
        let f = predict(&w, 0.3, &PredictorConfig::default()).unwrap();
        assert!((f.position - s.position).norm() < 1e-12);
        assert!(f.velocity.norm() < 1e-12);
    }

    #[test]
    fn identity_ignores_horizon() {
        let w = linear_window(Vec3::ZERO, Vec3::new(3.0, 0.0, 0.0), 4, 0.02);
        let cfg = PredictorConfig { backend: Backend::Identity, ..Default::default() };
        let f = predict(&w, 1.0, &cfg).unwrap();
        assert_eq!(f.position, w[3].position);
    }

    proptest! {
        #[test]
        fn shift_equivariance(dx in -5.0..5.0f64, dy in -5.0..5.0f64, vx in -3.0..3.0f64, h in 0.0..0.5f64) {
            let w = linear_window(Vec3::new(0.5, 0.2, 0.3), Vec3::new(vx, 0.4, 0.0), 8, 0.02);
            let shift = Vec3::new(dx, dy, 0.0);
            let shifted: Vec<Sample> = w.iter().map(|s| Sample { position: s.position + shift, ..*s }).collect();
            for degree in [1, 2] {
                let cfg = PredictorConfig { degree, ..Default::default() };
                let a = predict(&w, h, &cfg).unwrap();
                let b = predict(&shifted, h, &cfg).unwrap();
                prop_assert!((b.position - a.position - shift).norm() < 1e-9);
            }
        }
    }
}
