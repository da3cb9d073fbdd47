//! Inner-outer flight control: an LQR attitude regulator with integral action,
//! a Lyapunov-based horizontal guidance law that produces the pitch reference,
//! and a backstepping altitude tracker that sets the thrust magnitude.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linmodel::attitude_extended_model;
use crate::plant::RocketParams;
use crate::riccati::{is_hurwitz, lqr_gain, RiccatiError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("invalid gain: {0}")]
    InvalidGain(String),
    #[error("attitude gains {0:?} do not stabilize the extended pitch model")]
    NotStabilizing([f64; 3]),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
}

/// LQR weights on `(delta theta, delta omega, zeta_theta)` and `delta gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqrWeights {
    pub q: [f64; 3],
    pub r: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self {
            q: [100.0, 5.0, 1000.0],
            r: 100.0,
        }
    }
}

/// Feedback `delta gamma = -k_p dtheta - k_d omega + k_i zeta`, i.e. the row
/// `K = [k_p, k_d, -k_i]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeGains {
    pub k_p: f64,
    pub k_d: f64,
    pub k_i: f64,
}

impl AttitudeGains {
    pub fn design(p: &RocketParams, weights: &LqrWeights) -> Result<Self, ControlError> {
        let ss = attitude_extended_model(p);
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&weights.q));
        let r = DMatrix::from_element(1, 1, weights.r);
        let k = lqr_gain(&ss, &q, &r)?;
        Ok(Self::from_row([k[(0, 0)], k[(0, 1)], k[(0, 2)]]))
    }

    pub fn from_row(k: [f64; 3]) -> Self {
        Self {
            k_p: k[0],
            k_d: k[1],
            k_i: -k[2],
        }
    }

    pub fn row(&self) -> [f64; 3] {
        [self.k_p, self.k_d, -self.k_i]
    }

    /// `A - B K` of the extended pitch model.
    pub fn closed_loop_matrix(&self, p: &RocketParams) -> DMatrix<f64> {
        let ss = attitude_extended_model(p);
        let k = DMatrix::from_row_slice(1, 3, &self.row());
        &ss.a - &ss.b * k
    }
}

/// Which pitch error the proportional term acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProportionalTerm {
    /// `-k_p theta`: the reference enters only through the integrator.
    #[default]
    Deviation,
    /// `-k_p (theta - theta_d)`.
    TrackingError,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeCommand {
    pub deflection: f64,
    pub saturated: bool,
}

/// Integral-augmented pitch regulator. Holds the integrated pitch error.
#[derive(Debug, Clone)]
pub struct AttitudeController {
    gains: AttitudeGains,
    zeta: f64,
    max_deflection: f64,
    proportional: ProportionalTerm,
}

impl AttitudeController {
    pub fn new(gains: AttitudeGains, p: &RocketParams) -> Result<Self, ControlError> {
        if !is_hurwitz(&gains.closed_loop_matrix(p)) {
            return Err(ControlError::NotStabilizing(gains.row()));
        }
        Ok(Self {
            gains,
            zeta: 0.0,
            max_deflection: p.max_deflection,
            proportional: ProportionalTerm::Deviation,
        })
    }

    pub fn with_proportional_term(mut self, term: ProportionalTerm) -> Self {
        self.proportional = term;
        self
    }

    pub fn gains(&self) -> AttitudeGains {
        self.gains
    }

    pub fn integral_state(&self) -> f64 {
        self.zeta
    }

    pub fn set_integral_state(&mut self, zeta: f64) {
        self.zeta = zeta;
    }

    /// One control period. The output uses the current integral state, which is
    /// then advanced by forward Euler unless the output saturated.
    pub fn update(&mut self, theta: f64, omega: f64, theta_d: f64, dt: f64) -> AttitudeCommand {
        debug_assert!(dt > 0.0);
        let g = &self.gains;
        let p_err = match self.proportional {
            ProportionalTerm::Deviation => theta,
            ProportionalTerm::TrackingError => theta - theta_d,
        };
        let raw = -g.k_p * p_err - g.k_d * omega + g.k_i * self.zeta;
        let saturated = raw.abs() > self.max_deflection;
        if !saturated {
            self.zeta += (theta_d - theta) * dt;
        }
        AttitudeCommand {
            deflection: raw.clamp(-self.max_deflection, self.max_deflection),
            saturated,
        }
    }
}

/// Horizontal guidance and backstepping gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceGains {
    pub k_x: f64,
    pub k_1: f64,
    pub k_2: f64,
}

impl Default for GuidanceGains {
    fn default() -> Self {
        Self {
            k_x: 0.01,
            k_1: 2.0,
            k_2: 1.0,
        }
    }
}

impl GuidanceGains {
    pub fn validate(&self) -> Result<(), ControlError> {
        for (name, v) in [("k_x", self.k_x), ("k_1", self.k_1), ("k_2", self.k_2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ControlError::InvalidGain(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Vertical climb at `climb_rate` above a fixed horizontal target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryRef {
    pub x_d: f64,
    pub climb_rate: f64,
}

impl Default for TrajectoryRef {
    fn default() -> Self {
        Self {
            x_d: 2.0,
            climb_rate: 2.0,
        }
    }
}

impl TrajectoryRef {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !self.x_d.is_finite() {
            return Err(ControlError::InvalidTrajectory("x_d must be finite".into()));
        }
        if !self.climb_rate.is_finite() || self.climb_rate == 0.0 {
            return Err(ControlError::InvalidTrajectory(
                "climb_rate must be finite and nonzero".into(),
            ));
        }
        Ok(())
    }

    pub fn altitude(&self, t: f64) -> f64 {
        self.climb_rate * t
    }
}

/// Pitch reference `arcsin(k_x (x - x_d) / ydot_d)`, with the argument clamped
/// to `[-1, 1]`.
pub fn horizontal_guidance(x: f64, reference: &TrajectoryRef, k_x: f64) -> f64 {
    let arg = k_x * (x - reference.x_d) / reference.climb_rate;
    arg.clamp(-1.0, 1.0).asin()
}

/// Smallest `|cos(gamma - theta)|` the thrust law divides by.
pub const THRUST_DENOMINATOR_GUARD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrustCommand {
    pub thrust: f64,
    /// Output clamped to `[0, T_max]`.
    pub clamped: bool,
    /// `|cos(gamma - theta)|` fell below the guard.
    pub guarded: bool,
}

/// Backstepping thrust law for `y -> ydot_d t`:
/// `T = m (g - k_1 a2 - k_2 (a2 + k_1 a1)) / cos(gamma - theta)` with
/// `a1 = y - y_d`, `a2 = ydot - ydot_d`.
#[allow(clippy::too_many_arguments)]
pub fn altitude_backstepping(
    y: f64,
    y_rate: f64,
    theta: f64,
    gamma: f64,
    reference: &TrajectoryRef,
    t: f64,
    gains: &GuidanceGains,
    p: &RocketParams,
) -> ThrustCommand {
    let alpha1 = y - reference.altitude(t);
    let alpha2 = y_rate - reference.climb_rate;
    let alpha2_tilde = alpha2 + gains.k_1 * alpha1;
    let mut denom = (gamma - theta).cos();
    let guarded = denom.abs() < THRUST_DENOMINATOR_GUARD;
    if guarded {
        denom = THRUST_DENOMINATOR_GUARD.copysign(denom);
    }
    let raw = p.mass * (p.gravity - gains.k_1 * alpha2 - gains.k_2 * alpha2_tilde) / denom;
    let thrust = raw.clamp(0.0, p.max_thrust);
    ThrustCommand {
        thrust,
        clamped: thrust != raw,
        guarded,
    }
}

/// Samples of one Lyapunov function along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub name: &'static str,
    pub values: Vec<f64>,
    /// Allowed per-step increase before the function counts as increasing.
    pub band: f64,
    /// Leading samples excluded from the monotonicity check.
    pub skip: usize,
}

impl Certificate {
    fn new(name: &'static str, values: Vec<f64>, skip: usize) -> Self {
        let peak = values.iter().copied().fold(0.0f64, f64::max);
        Self {
            name,
            values,
            band: 1e-12 + 1e-9 * peak,
            skip,
        }
    }

    /// Largest single-step increase after the skipped prefix.
    pub fn max_increase(&self) -> f64 {
        self.values
            .get(self.skip..)
            .unwrap_or(&[])
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn non_increasing(&self) -> bool {
        self.max_increase() <= self.band
    }

    /// Strict decrease at every sample whose value exceeds `floor`.
    pub fn strictly_decreasing_above(&self, floor: f64) -> bool {
        self.values[self.skip.min(self.values.len())..]
            .windows(2)
            .all(|w| w[0] <= floor || w[1] < w[0])
    }
}

/// Tracking errors along a run: `x - x_d`, `y - y_d`, `ydot - ydot_d`.
#[derive(Debug, Clone, Default)]
pub struct TrackingErrors {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_rate: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LyapunovReport {
    /// `V = x~^2 / 2` of the horizontal guidance law.
    pub guidance: Certificate,
    /// `V1 = a1^2 / 2`.
    pub altitude_inner: Certificate,
    /// `V2 = V1 + (a2 + k_1 a1)^2 / 2`, checked from the second sample on.
    pub altitude: Certificate,
}

pub fn lyapunov_certificates(errors: &TrackingErrors, gains: &GuidanceGains) -> LyapunovReport {
    let guidance = errors.x.iter().map(|e| 0.5 * e * e).collect();
    let v1: Vec<f64> = errors.y.iter().map(|a| 0.5 * a * a).collect();
    let v2 = errors
        .y
        .iter()
        .zip(&errors.y_rate)
        .zip(&v1)
        .map(|((a1, a2), v1)| {
            let at = a2 + gains.k_1 * a1;
            v1 + 0.5 * at * at
        })
        .collect();
    LyapunovReport {
        guidance: Certificate::new("V", guidance, 0),
        altitude_inner: Certificate::new("V1", v1, 0),
        altitude: Certificate::new("V2", v2, 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn reference_gains() -> AttitudeGains {
        AttitudeGains::from_row([1.9558, 0.4467, -3.1623])
    }

    #[test]
    fn attitude_equilibrium() {
        let p = RocketParams::default();
        let mut c = AttitudeController::new(reference_gains(), &p).unwrap();
        let cmd = c.update(0.0, 0.0, 0.0, 1e-3);
        assert_eq!(cmd.deflection, 0.0);
        assert!(!cmd.saturated);
    }

    #[test]
    fn attitude_proportional_response() {
        let p = RocketParams::default();
        let mut c = AttitudeController::new(reference_gains(), &p).unwrap();
        let cmd = c.update(0.1, 0.0, 0.0, 1e-3);
        assert_abs_diff_eq!(cmd.deflection, -0.19558, epsilon = 1e-12);
        // integral advanced after the output
        assert_abs_diff_eq!(c.integral_state(), -1e-4, epsilon = 1e-15);
    }

    #[test]
    fn tracking_error_variant() {
        let p = RocketParams::default();
        let mut c = AttitudeController::new(reference_gains(), &p)
            .unwrap()
            .with_proportional_term(ProportionalTerm::TrackingError);
        let cmd = c.update(0.1, 0.0, 0.1, 1e-3);
        assert_eq!(cmd.deflection, 0.0);
    }

    #[test]
    fn anti_windup_freezes_integral() {
        let p = RocketParams::default();
        let mut c = AttitudeController::new(reference_gains(), &p).unwrap();
        let cmd = c.update(0.5, 0.0, 0.0, 1e-3);
        assert!(!cmd.saturated);
        let cmd = c.update(3.0, 0.0, 0.0, 1e-3);
        assert!(cmd.saturated);
        assert_eq!(cmd.deflection, -p.max_deflection);
        assert_abs_diff_eq!(c.integral_state(), -5e-4, epsilon = 1e-15);
    }

    #[test]
    fn rejects_destabilizing_gains() {
        let p = RocketParams::default();
        let err =
            AttitudeController::new(AttitudeGains::from_row([1.0, 0.1, 3.0]), &p).unwrap_err();
        assert!(matches!(err, ControlError::NotStabilizing(_)));
    }

    #[test]
    fn reference_gains_close_the_loop() {
        let p = RocketParams::default();
        let eig = reference_gains()
            .closed_loop_matrix(&p)
            .complex_eigenvalues();
        assert!(eig.iter().all(|e| e.re < 0.0));
    }

    #[test]
    fn guidance_values() {
        let r = TrajectoryRef::default();
        assert_eq!(horizontal_guidance(2.0, &r, 0.5), 0.0);
        assert_abs_diff_eq!(
            horizontal_guidance(4.0, &r, 0.5),
            0.5f64.asin(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            horizontal_guidance(4.0, &r, 0.5),
            std::f64::consts::FRAC_PI_6,
            epsilon = 1e-12
        );
        assert_eq!(
            horizontal_guidance(22.0, &r, 0.5),
            std::f64::consts::FRAC_PI_2
        );
        assert_eq!(
            horizontal_guidance(-18.0, &r, 0.5),
            -std::f64::consts::FRAC_PI_2
        );
    }

    #[test]
    fn trim_thrust() {
        let p = RocketParams::default();
        let r = TrajectoryRef::default();
        let cmd = altitude_backstepping(6.0, 2.0, 0.2, 0.2, &r, 3.0, &GuidanceGains::default(), &p);
        assert_abs_diff_eq!(cmd.thrust, 19.62, epsilon = 1e-12);
        assert!(!cmd.clamped && !cmd.guarded);
    }

    #[test]
    fn thrust_below_reference() {
        let p = RocketParams::default();
        let r = TrajectoryRef::default();
        let cmd = altitude_backstepping(5.0, 2.0, 0.0, 0.0, &r, 3.0, &GuidanceGains::default(), &p);
        assert_abs_diff_eq!(cmd.thrust, 23.62, epsilon = 1e-12);
    }

    #[test]
    fn thrust_guards() {
        let p = RocketParams::default();
        let r = TrajectoryRef::default();
        let g = GuidanceGains::default();
        let wide = RocketParams {
            max_thrust: 1000.0,
            ..p
        };
        let cmd = altitude_backstepping(0.0, 2.0, 0.0, 1.55, &r, 0.0, &g, &wide);
        assert!(cmd.guarded && !cmd.clamped);
        assert_abs_diff_eq!(
            cmd.thrust,
            p.weight() / THRUST_DENOMINATOR_GUARD,
            epsilon = 1e-9
        );
        let cmd = altitude_backstepping(0.0, 2.0, 0.0, -1.55, &r, 0.0, &g, &p);
        assert!(cmd.guarded && cmd.clamped);
        let cmd = altitude_backstepping(-100.0, 0.0, 0.0, 0.0, &r, 0.0, &g, &p);
        assert!(cmd.clamped);
        assert_eq!(cmd.thrust, p.max_thrust);
        let cmd = altitude_backstepping(100.0, 10.0, 0.0, 0.0, &r, 0.0, &g, &p);
        assert!(cmd.clamped);
        assert_eq!(cmd.thrust, 0.0);
    }

    #[test]
    fn validation() {
        assert!(GuidanceGains {
            k_x: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrajectoryRef {
            x_d: 2.0,
            climb_rate: 0.0
        }
        .validate()
        .is_err());
        TrajectoryRef::default().validate().unwrap();
    }

    #[test]
    fn zero_error_certificate() {
        let errors = TrackingErrors {
            x: vec![0.0; 10],
            y: vec![0.0; 10],
            y_rate: vec![0.0; 10],
        };
        let report = lyapunov_certificates(&errors, &GuidanceGains::default());
        assert!(report.guidance.values.iter().all(|&v| v == 0.0));
        assert!(report.guidance.non_increasing());
    }

    #[test]
    fn increasing_sequence_fails() {
        let errors = TrackingErrors {
            x: vec![0.1, 0.2, 0.3],
            ..Default::default()
        };
        let report = lyapunov_certificates(&errors, &GuidanceGains::default());
        assert!(!report.guidance.non_increasing());
        assert!(!report.guidance.strictly_decreasing_above(0.0));
    }

    proptest! {
        #[test]
        fn guidance_odd_and_monotone(e1 in -50.0f64..50.0, e2 in -50.0f64..50.0, kx in 0.01f64..2.0) {
            let r = TrajectoryRef { x_d: 0.0, climb_rate: 2.0 };
            let a = horizontal_guidance(e1, &r, kx);
            prop_assert_eq!(a, -horizontal_guidance(-e1, &r, kx));
            let b = horizontal_guidance(e2, &r, kx);
            if e1 <= e2 { prop_assert!(a <= b); }
            prop_assert!(a.abs() <= std::f64::consts::FRAC_PI_2);
        }

        #[test]
        fn trim_thrust_any_gains(k1 in 0.01f64..10.0, k2 in 0.01f64..10.0, t in 0.0f64..100.0, ang in -1.0f64..1.0) {
            let p = RocketParams::default();
            let r = TrajectoryRef::default();
            let g = GuidanceGains { k_x: 0.01, k_1: k1, k_2: k2 };
            let cmd = altitude_backstepping(r.altitude(t), r.climb_rate, ang, ang, &r, t, &g, &p);
            prop_assert_eq!(cmd.thrust, p.weight());
        }
    }
}
