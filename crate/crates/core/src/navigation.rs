//! Steady-state Kalman filters for pitch (rate gyro + inclinometer) and altitude
//! (vertical accelerometer + GPS), discretized with forward Euler.
//!
//! Both are complementary filters: the inertial path is high-passed and the
//! absolute measurement low-passed, and the two transfer functions sum to one.

use serde::{Deserialize, Serialize};

use crate::analysis::{log_grid, TransferFunction};
use num_complex::Complex64;

/// Noise covariances `q` (process) and `r` (measurement) of one filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseCovariances {
    pub q: f64,
    pub r: f64,
}

impl NoiseCovariances {
    pub const ATTITUDE: Self = Self { q: 1e-6, r: 1e-6 };
    pub const ALTITUDE: Self = Self { q: 0.1, r: 1.0 };
}

/// `theta_hat' = omega_m + l (theta_m - theta_hat)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttitudeFilter {
    pub estimate: f64,
    pub gain: f64,
    pub noise: NoiseCovariances,
}

impl AttitudeFilter {
    /// Gain from the scalar Riccati solution `p = sqrt(q r)`, `l = sqrt(q / r)`.
    pub fn from_covariances(noise: NoiseCovariances) -> Self {
        Self {
            estimate: 0.0,
            gain: (noise.q / noise.r).sqrt(),
            noise,
        }
    }

    pub fn step(&mut self, omega_m: f64, theta_m: f64, dt: f64) -> f64 {
        self.estimate += dt * (omega_m + self.gain * (theta_m - self.estimate));
        self.estimate
    }

    /// Steady-state error variance of the continuous filter, `sqrt(q r)`.
    pub fn error_variance(&self) -> f64 {
        (self.noise.q * self.noise.r).sqrt()
    }

    /// `F_theta = l / (s + l)` from the inclinometer.
    pub fn inclinometer_tf(&self) -> TransferFunction {
        TransferFunction::new(vec![self.gain], vec![1.0, self.gain])
    }

    /// `F_omega = 1 / (s + l)` from the gyro.
    pub fn gyro_tf(&self) -> TransferFunction {
        TransferFunction::new(vec![1.0], vec![1.0, self.gain])
    }

    /// Error dynamics pole.
    pub fn pole(&self) -> f64 {
        -self.gain
    }
}

/// `y_hat' = v_hat + l_y (y_m - y_hat)`, `v_hat' = a_m + l_v (y_m - y_hat)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AltitudeFilter {
    pub position: f64,
    pub velocity: f64,
    pub gain_position: f64,
    pub gain_velocity: f64,
    pub noise: NoiseCovariances,
}

impl AltitudeFilter {
    /// Double-integrator closed form `l_y = sqrt(2) (q/r)^(1/4)`,
    /// `l_v = sqrt(q/r)`.
    pub fn from_covariances(noise: NoiseCovariances) -> Self {
        let ratio = noise.q / noise.r;
        Self {
            position: 0.0,
            velocity: 0.0,
            gain_position: std::f64::consts::SQRT_2 * ratio.powf(0.25),
            gain_velocity: ratio.sqrt(),
            noise,
        }
    }

    pub fn step(&mut self, a_m: f64, y_m: f64, dt: f64) -> (f64, f64) {
        let innovation = y_m - self.position;
        self.position += dt * (self.velocity + self.gain_position * innovation);
        self.velocity += dt * (a_m + self.gain_velocity * innovation);
        (self.position, self.velocity)
    }

    /// Steady-state position error variance `sqrt(2) q^(1/4) r^(3/4)`.
    pub fn position_error_variance(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.noise.q.powf(0.25) * self.noise.r.powf(0.75)
    }

    fn characteristic(&self) -> Vec<f64> {
        vec![1.0, self.gain_position, self.gain_velocity]
    }

    /// `F_y = (l_y s + l_v) / (s^2 + l_y s + l_v)` from GPS.
    pub fn gps_tf(&self) -> TransferFunction {
        TransferFunction::new(
            vec![self.gain_position, self.gain_velocity],
            self.characteristic(),
        )
    }

    /// `F_a = 1 / (s^2 + l_y s + l_v)` from the accelerometer.
    pub fn accelerometer_tf(&self) -> TransferFunction {
        TransferFunction::new(vec![1.0], self.characteristic())
    }

    /// Roots of `s^2 + l_y s + l_v`.
    pub fn poles(&self) -> [Complex64; 2] {
        let b = self.gain_position;
        let c = self.gain_velocity;
        let disc = Complex64::new(b * b - 4.0 * c, 0.0).sqrt();
        [(-b + disc) / 2.0, (-b - disc) / 2.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplementaryReport {
    /// `max |F_theta + s F_omega - 1|` over the grid.
    pub attitude_deviation: f64,
    /// `max |F_y + s^2 F_a - 1|` over the grid.
    pub altitude_deviation: f64,
    pub grid_points: usize,
}

/// Default grid for the identity check, 1e-3 to 1e3 rad/s.
pub fn identity_grid() -> Vec<f64> {
    log_grid(1e-3, 1e3, 601)
}

pub fn complementary_identity_check(
    attitude: &AttitudeFilter,
    altitude: &AltitudeFilter,
    grid: &[f64],
) -> ComplementaryReport {
    let one = Complex64::new(1.0, 0.0);
    let (fth, fom) = (attitude.inclinometer_tf(), attitude.gyro_tf());
    let (fy, fa) = (altitude.gps_tf(), altitude.accelerometer_tf());
    let mut report = ComplementaryReport {
        attitude_deviation: 0.0,
        altitude_deviation: 0.0,
        grid_points: grid.len(),
    };
    for &w in grid {
        let s = Complex64::new(0.0, w);
        let att = fth.eval(s) + s * fom.eval(s) - one;
        let alt = fy.eval(s) + s * s * fa.eval(s) - one;
        report.attitude_deviation = report.attitude_deviation.max(att.norm());
        report.altitude_deviation = report.altitude_deviation.max(alt.norm());
    }
    report
}
