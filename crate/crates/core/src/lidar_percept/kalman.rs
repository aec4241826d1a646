//! Constant-velocity Kalman filter over 3D position and velocity.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, SymmetricEigen, Vector3, Vector6};

use crate::geometry::Vec3;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConfig {
    /// White-acceleration process noise density, m/s^2.
    pub sigma_accel: f64,
    /// Measurement noise per axis, m.
    pub sigma_meas: f64,
    /// Initial velocity uncertainty per axis, m/s.
    pub sigma_vel0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kalman3 {
    pub state: Vector6<f64>,
    pub cov: Matrix6<f64>,
}

impl Kalman3 {
    pub fn new(position: Vec3, cfg: &KalmanConfig) -> Self {
        let mut state = Vector6::zeros();
        state.fixed_rows_mut::<3>(0).copy_from(&position.to_na());
        let mut cov = Matrix6::zeros();
        for i in 0..3 {
            cov[(i, i)] = cfg.sigma_meas * cfg.sigma_meas;
            cov[(i + 3, i + 3)] = cfg.sigma_vel0 * cfg.sigma_vel0;
        }
        Self { state, cov }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.state[0], self.state[1], self.state[2])
    }

    pub fn velocity(&self) -> Vec3 {
        Vec3::new(self.state[3], self.state[4], self.state[5])
    }

    pub fn predict(&mut self, dt: f64, cfg: &KalmanConfig) {
        let mut f = Matrix6::identity();
        let mut q = Matrix6::zeros();
        let qa = cfg.sigma_accel * cfg.sigma_accel;
        for i in 0..3 {
            f[(i, i + 3)] = dt;
            q[(i, i)] = qa * dt.powi(4) / 4.0;
            q[(i, i + 3)] = qa * dt.powi(3) / 2.0;
            q[(i + 3, i)] = qa * dt.powi(3) / 2.0;
            q[(i + 3, i + 3)] = qa * dt * dt;
        }
        self.state = f * self.state;
        self.cov = f * self.cov * f.transpose() + q;
        self.symmetrize();
    }

    /// Position update in Joseph form. Fails when the covariance loses
    /// positive semi-definiteness.
    pub fn update(&mut self, z: Vec3, cfg: &KalmanConfig) -> Result<()> {
        let h = Matrix3x6::new(
            1.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
        );
        let r = Matrix3::identity() * (cfg.sigma_meas * cfg.sigma_meas);
        let innovation: Vector3<f64> = z.to_na() - h * self.state;
        let s = h * self.cov * h.transpose() + r;
        let s_inv = s.try_inverse().ok_or_else(|| Error::numerical("singular innovation covariance"))?;
        let k = self.cov * h.transpose() * s_inv;
        self.state += k * innovation;
        let i_kh = Matrix6::identity() - k * h;
        self.cov = i_kh * self.cov * i_kh.transpose() + k * r * k.transpose();
        self.symmetrize();
        self.check()
    }

    fn symmetrize(&mut self) {
        self.cov = (self.cov + self.cov.transpose()) * 0.5;
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.cov).eigenvalues.min()
    }

    fn check(&self) -> Result<()> {
        if !self.state.iter().all(|x| x.is_finite()) || !self.cov.iter().all(|x| x.is_finite()) {
            return Err(Error::numerical("non-finite Kalman state"));
        }
        let min = self.min_eigenvalue();
        if min < -1e-12 {
            return Err(Error::numerical(format!("covariance not PSD (min eigenvalue {min:e})")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> KalmanConfig {
        KalmanConfig { sigma_accel: 3.0, sigma_meas: 0.05, sigma_vel0: 20.0 }
    }

    #[test]
    fn stationary_target_has_zero_velocity() {
        let c = cfg();
        let mut kf = Kalman3::new(Vec3::ZERO, &c);
        for _ in 0..20 {
            kf.predict(0.02, &c);
            kf.update(Vec3::ZERO, &c).unwrap();
        }
        assert!(kf.velocity().norm() < 1e-3);
    }

    #[test]
    fn converges_on_constant_velocity() {
        let c = cfg();
        let dt = 0.02;
        let mut kf = Kalman3::new(Vec3::ZERO, &c);
        for k in 1..=30 {
            kf.predict(dt, &c);
            kf.update(Vec3::new(k as f64 * dt, 0.0, 0.0), &c).unwrap();
            assert!(kf.min_eigenvalue() > -1e-12);
        }
        assert!((kf.velocity() - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-3);
    }

    #[test]
    fn prediction_grows_uncertainty() {
        let c = cfg();
        let mut kf = Kalman3::new(Vec3::ZERO, &c);
        kf.update(Vec3::ZERO, &c).unwrap();
        let before = kf.cov.trace();
        kf.predict(0.02, &c);
        assert!(kf.cov.trace() > before);
    }
}
