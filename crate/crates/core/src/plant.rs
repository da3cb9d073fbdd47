//! Planar rigid-body model of the e-rocket.
//!
//! The state mixes frames: position `(x, y)` is inertial, velocity `(u, v)` is
//! expressed in the body frame, and `theta` is the pitch angle measured from the
//! inertial vertical. Thrust `T` is deflected by `gamma` at `arm` metres below
//! the centre of mass, so the torque is `arm * T * sin(gamma)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("non-finite {0} passed to the dynamics")]
    NonFinite(&'static str),
    #[error("invalid rocket parameter: {0}")]
    InvalidParams(String),
}

/// Physical constants of the vehicle plus actuator limits.
///
/// Thrust and deflection limits are not part of the physical model; they default
/// to `4 m g` and `pi / 2` and only exist to keep transients physical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RocketParams {
    /// Mass [kg].
    pub mass: f64,
    /// Distance from the centre of mass to the thrust application point [m].
    pub arm: f64,
    /// Body length [m].
    pub length: f64,
    /// Moment of inertia about the out-of-plane axis [kg m^2].
    pub inertia: f64,
    /// Gravitational acceleration [m/s^2].
    pub gravity: f64,
    /// Thrust saturation [N].
    pub max_thrust: f64,
    /// Deflection saturation [rad].
    pub max_deflection: f64,
}

impl RocketParams {
    /// Solid slender cylinder: `J = m L_b^2 / 12`, `T_max = 4 m g`.
    pub fn from_geometry(mass: f64, arm: f64, length: f64, gravity: f64) -> Self {
        Self {
            mass,
            arm,
            length,
            inertia: mass * length * length / 12.0,
            gravity,
            max_thrust: 4.0 * mass * gravity,
            max_deflection: PI / 2.0,
        }
    }

    /// Weight, which is also the trim thrust for vertical flight.
    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("mass", self.mass),
            ("arm", self.arm),
            ("length", self.length),
            ("inertia", self.inertia),
            ("gravity", self.gravity),
            ("max_thrust", self.max_thrust),
            ("max_deflection", self.max_deflection),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(PlantError::InvalidParams(format!(
                    "{name} must be finite and strictly positive, got {value}"
                )));
            }
        }
        if self.max_thrust < self.weight() {
            return Err(PlantError::InvalidParams(format!(
                "max_thrust {} cannot hold the weight {}",
                self.max_thrust,
                self.weight()
            )));
        }
        Ok(())
    }
}

impl Default for RocketParams {
    fn default() -> Self {
        Self::from_geometry(2.0, 0.5, 1.5, 9.81)
    }
}

/// Six-state vector `(x, u, y, v, theta, omega)`.
///
/// The same layout is reused for time derivatives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantState {
    pub x: f64,
    pub u: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
    pub omega: f64,
}

impl PlantState {
    pub const DIM: usize = 6;
    pub const LABELS: [&'static str; 6] = ["x", "u", "y", "v", "theta", "omega"];

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            x: a[0],
            u: a[1],
            y: a[2],
            v: a[3],
            theta: a[4],
            omega: a[5],
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.u, self.y, self.v, self.theta, self.omega]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// `self + h * rate`, slot by slot.
    pub fn advanced(self, rate: &PlantState, h: f64) -> Self {
        let mut out = self.to_array();
        for (o, r) in out.iter_mut().zip(rate.to_array()) {
            *o += h * r;
        }
        Self::from_array(out)
    }

    /// Inertial velocity `R(theta) [u, v]^T`.
    pub fn inertial_velocity(&self) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.u * c - self.v * s, self.u * s + self.v * c]
    }
}

/// Thrust magnitude `T` [N] and deflection `gamma` [rad].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub thrust: f64,
    pub deflection: f64,
}

impl ControlInput {
    pub fn new(thrust: f64, deflection: f64) -> Self {
        Self { thrust, deflection }
    }

    /// Thrust `m g` with no deflection.
    pub fn hover(p: &RocketParams) -> Self {
        Self::new(p.weight(), 0.0)
    }

    pub fn saturated(self, p: &RocketParams) -> Self {
        Self {
            thrust: self.thrust.clamp(0.0, p.max_thrust),
            deflection: self.deflection.clamp(-p.max_deflection, p.max_deflection),
        }
    }

    pub fn torque(&self, p: &RocketParams) -> f64 {
        p.arm * self.thrust * self.deflection.sin()
    }
}

/// Rotation from body to inertial frame.
pub fn rotation_matrix(theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[c, -s], [s, c]]
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let wrapped = theta.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Right-hand side of the six-equation model.
pub fn dynamics_derivative(
    s: &PlantState,
    c: &ControlInput,
    p: &RocketParams,
) -> Result<PlantState, PlantError> {
    if !s.is_finite() {
        return Err(PlantError::NonFinite("state"));
    }
    if !(c.thrust.is_finite() && c.deflection.is_finite()) {
        return Err(PlantError::NonFinite("input"));
    }
    let (st, ct) = s.theta.sin_cos();
    let (sg, cg) = c.deflection.sin_cos();
    let accel = c.thrust / p.mass;
    Ok(PlantState {
        x: s.u * ct - s.v * st,
        u: s.v * s.omega - p.gravity * st + accel * sg,
        y: s.u * st + s.v * ct,
        v: -s.u * s.omega - p.gravity * ct + accel * cg,
        theta: s.omega,
        omega: p.arm * c.thrust / p.inertia * sg,
    })
}

/// Inertial vertical acceleration `(T/m) cos(gamma - theta) - g`, i.e. what an
/// ideal vertical accelerometer reads.
pub fn vertical_acceleration(s: &PlantState, c: &ControlInput, p: &RocketParams) -> f64 {
    c.thrust / p.mass * (c.deflection - s.theta).cos() - p.gravity
}
