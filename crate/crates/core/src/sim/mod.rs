//! Fixed-step closed-loop simulation: Euler integration at one rate for plant,
//! sensors, filters and controllers, with seeded sensor noise.

mod noise;
mod trace;

pub use noise::{noise_sample, BandLimitedNoise};
pub use trace::{
    detect_lateral_divergence, format_significant, sat, HalfCycle, LateralDivergence, SensorSample,
    SimTrace, TraceRecord, CSV_COLUMNS, PEAK_GROWTH,
};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    altitude_backstepping, horizontal_guidance, AttitudeController, AttitudeGains, ControlError,
    GuidanceGains, LqrWeights, ProportionalTerm, TrajectoryRef,
};
use crate::navigation::{AltitudeFilter, AttitudeFilter, NoiseCovariances};
use crate::plant::{
    dynamics_derivative, vertical_acceleration, wrap_angle, ControlInput, PlantError, PlantState,
    RocketParams,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("state became non-finite at step {step} (t = {t} s)")]
    NonFinite { step: usize, t: f64 },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `x' = -ydot_d sin(theta)` with the pitch loop; altitude follows the reference.
    ReducedLateral,
    /// Vertical channel only, `theta = gamma = 0`.
    ReducedVertical,
    /// Full six-state model with every loop closed.
    #[serde(rename = "full-2d")]
    Full2d,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::ReducedLateral => "reduced-lateral",
            Variant::ReducedVertical => "reduced-vertical",
            Variant::Full2d => "full-2d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateInit {
    Zero,
    Truth,
}

/// Per-sample noise variances of the four sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoise {
    pub gyro: f64,
    pub inclinometer: f64,
    pub accelerometer: f64,
    pub gps: f64,
}

impl SensorNoise {
    pub const ZERO: Self = Self {
        gyro: 0.0,
        inclinometer: 0.0,
        accelerometer: 0.0,
        gps: 0.0,
    };

    fn as_array(&self) -> [(&'static str, f64); 4] {
        [
            ("gyro", self.gyro),
            ("inclinometer", self.inclinometer),
            ("accelerometer", self.accelerometer),
            ("gps", self.gps),
        ]
    }
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            gyro: NoiseCovariances::ATTITUDE.q,
            inclinometer: NoiseCovariances::ATTITUDE.r,
            accelerometer: NoiseCovariances::ALTITUDE.q,
            gps: NoiseCovariances::ALTITUDE.r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttitudeConfig {
    pub lqr: LqrWeights,
    /// Explicit `[k_p, k_d, -k_i]`, bypassing the LQR design.
    pub gains: Option<[f64; 3]>,
    pub proportional: ProportionalTerm,
}

impl AttitudeConfig {
    pub fn resolve_gains(&self, p: &RocketParams) -> Result<AttitudeGains, ControlError> {
        match self.gains {
            Some(row) => Ok(AttitudeGains::from_row(row)),
            None => AttitudeGains::design(p, &self.lqr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Design covariances of the pitch filter.
    pub attitude: NoiseCovariances,
    /// Design covariances of the altitude filter.
    pub altitude: NoiseCovariances,
    pub init: EstimateInit,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            attitude: NoiseCovariances::ATTITUDE,
            altitude: NoiseCovariances::ALTITUDE,
            init: EstimateInit::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub variant: Variant,
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    /// Feed the estimates (instead of the true state) to the controllers.
    pub navigation: bool,
    /// Reduced lateral model only: replace the pitch loop by `theta = theta_d`.
    pub ideal_inner_loop: bool,
    pub initial: PlantState,
    pub reference: TrajectoryRef,
    pub plant: RocketParams,
    pub attitude: AttitudeConfig,
    pub guidance: GuidanceGains,
    pub filters: FilterConfig,
    pub noise: SensorNoise,
    /// Initial transient excluded from the summary statistics [s].
    pub transient: f64,
    /// Lateral error bound, as a multiple of its initial value.
    pub divergence_factor: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::full_2d()
    }
}

impl ScenarioConfig {
    /// Climb from rest at the origin with navigation in the loop.
    pub fn full_2d() -> Self {
        Self {
            variant: Variant::Full2d,
            dt: 1e-3,
            duration: 60.0,
            seed: 1,
            navigation: true,
            ideal_inner_loop: false,
            initial: PlantState::default(),
            reference: TrajectoryRef::default(),
            plant: RocketParams::default(),
            attitude: AttitudeConfig::default(),
            guidance: GuidanceGains::default(),
            filters: FilterConfig::default(),
            noise: SensorNoise::default(),
            transient: 10.0,
            divergence_factor: 10.0,
        }
    }

    pub fn reduced_lateral() -> Self {
        Self {
            variant: Variant::ReducedLateral,
            duration: 30.0,
            navigation: false,
            guidance: GuidanceGains {
                k_x: 0.5,
                ..GuidanceGains::default()
            },
            ..Self::full_2d()
        }
    }

    pub fn reduced_vertical() -> Self {
        Self {
            variant: Variant::ReducedVertical,
            duration: 20.0,
            navigation: false,
            ..Self::full_2d()
        }
    }

    pub fn preset(variant: Variant) -> Self {
        match variant {
            Variant::ReducedLateral => Self::reduced_lateral(),
            Variant::ReducedVertical => Self::reduced_vertical(),
            Variant::Full2d => Self::full_2d(),
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.duration.is_finite() && self.duration >= self.dt) {
            return bad(format!(
                "duration {} must be at least dt {}",
                self.duration, self.dt
            ));
        }
        if !self.initial.is_finite() {
            return bad("initial state must be finite".into());
        }
        for (name, v) in self.noise.as_array() {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("noise.{name} must be >= 0, got {v}"));
            }
        }
        for (name, c) in [
            ("attitude", self.filters.attitude),
            ("altitude", self.filters.altitude),
        ] {
            if !(c.q > 0.0 && c.r > 0.0 && c.q.is_finite() && c.r.is_finite()) {
                return bad(format!("filters.{name} covariances must be > 0"));
            }
        }
        if !(self.transient >= 0.0 && self.divergence_factor > 0.0) {
            return bad("transient must be >= 0 and divergence_factor > 0".into());
        }
        self.plant.validate()?;
        self.guidance.validate()?;
        self.reference.validate()?;
        Ok(())
    }
}

/// `s + dt f(s, c)` on the full model, with the pitch angle wrapped.
pub fn euler_step(
    s: &PlantState,
    c: &ControlInput,
    p: &RocketParams,
    dt: f64,
) -> Result<PlantState, PlantError> {
    let rate = dynamics_derivative(s, c, p)?;
    let mut next = s.advanced(&rate, dt);
    next.theta = wrap_angle(next.theta);
    if !next.is_finite() {
        return Err(PlantError::NonFinite("state"));
    }
    Ok(next)
}

fn reduced_lateral_rate(
    s: &PlantState,
    c: &ControlInput,
    r: &TrajectoryRef,
    p: &RocketParams,
) -> PlantState {
    PlantState {
        x: -r.climb_rate * s.theta.sin(),
        y: r.climb_rate,
        theta: s.omega,
        omega: p.arm * c.thrust / p.inertia * c.deflection.sin(),
        ..PlantState::default()
    }
}

fn reduced_vertical_rate(s: &PlantState, c: &ControlInput, p: &RocketParams) -> PlantState {
    PlantState {
        y: s.v,
        v: c.thrust / p.mass - p.gravity,
        ..PlantState::default()
    }
}

struct Sensors {
    gyro: (BandLimitedNoise, ChaCha8Rng),
    inclinometer: (BandLimitedNoise, ChaCha8Rng),
    accelerometer: (BandLimitedNoise, ChaCha8Rng),
    gps: (BandLimitedNoise, ChaCha8Rng),
}

impl Sensors {
    fn new(noise: &SensorNoise, seed: u64, dt: f64) -> Self {
        let ch = |cov: f64, i: u64| {
            (
                BandLimitedNoise::from_covariance(cov, dt),
                noise::channel_rng(seed, i),
            )
        };
        Self {
            gyro: ch(noise.gyro, 0),
            inclinometer: ch(noise.inclinometer, 1),
            accelerometer: ch(noise.accelerometer, 2),
            gps: ch(noise.gps, 3),
        }
    }

    /// Gyro, inclinometer and GPS; the accelerometer is read once the input
    /// acting at this instant is known.
    fn sense(&mut self, s: &PlantState) -> SensorSample {
        SensorSample {
            omega_m: s.omega + draw(&mut self.gyro),
            theta_m: s.theta + draw(&mut self.inclinometer),
            a_m: f64::NAN,
            y_m: s.y + draw(&mut self.gps),
            x: s.x,
            u: s.u,
        }
    }

    fn accelerometer(&mut self, s: &PlantState, input: &ControlInput, p: &RocketParams) -> f64 {
        vertical_acceleration(s, input, p) + draw(&mut self.accelerometer)
    }
}

fn draw(c: &mut (BandLimitedNoise, ChaCha8Rng)) -> f64 {
    c.0.sample(&mut c.1)
}

/// Per step: sample gyro, inclinometer and GPS; read the filter estimates for
/// `t_k`; guidance, attitude law and thrust law; read the accelerometer under
/// the applied input; record; propagate filters and plant to `t_{k+1}`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimTrace, SimError> {
    cfg.validate()?;
    let p = &cfg.plant;
    let r = &cfg.reference;
    let dt = cfg.dt;
    let gains = cfg.attitude.resolve_gains(p)?;
    let mut attitude =
        AttitudeController::new(gains, p)?.with_proportional_term(cfg.attitude.proportional);
    let mut att_filter = AttitudeFilter::from_covariances(cfg.filters.attitude);
    let mut alt_filter = AltitudeFilter::from_covariances(cfg.filters.altitude);
    let mut state = cfg.initial;
    if cfg.variant == Variant::ReducedLateral {
        state.u = 0.0;
        state.v = r.climb_rate;
    }
    if cfg.filters.init == EstimateInit::Truth {
        att_filter.estimate = state.theta;
        alt_filter.position = state.y;
        alt_filter.velocity = state.inertial_velocity()[1];
    }
    let mut sensors = Sensors::new(&cfg.noise, cfg.seed, dt);

    let steps = cfg.steps();
    let mut records = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let mut meas = sensors.sense(&state);
        let (theta_hat, y_hat, v_hat) = (
            att_filter.estimate,
            alt_filter.position,
            alt_filter.velocity,
        );
        let (theta_fb, omega_fb, y_fb, y_rate_fb) = if cfg.navigation {
            (theta_hat, meas.omega_m, y_hat, v_hat)
        } else {
            (
                state.theta,
                state.omega,
                state.y,
                state.inertial_velocity()[1],
            )
        };

        let mut flags = 0u8;
        let mut theta_d = 0.0;
        let mut gamma = 0.0;
        let mut thrust = p.weight();
        if cfg.variant != Variant::ReducedVertical {
            theta_d = horizontal_guidance(state.x, r, cfg.guidance.k_x);
            if cfg.ideal_inner_loop && cfg.variant == Variant::ReducedLateral {
                state.theta = theta_d;
                state.omega = 0.0;
            } else {
                let cmd = attitude.update(theta_fb, omega_fb, theta_d, dt);
                gamma = cmd.deflection;
                if cmd.saturated {
                    flags |= sat::DEFLECTION;
                }
            }
        }
        if cfg.variant != Variant::ReducedLateral {
            let cmd =
                altitude_backstepping(y_fb, y_rate_fb, theta_fb, gamma, r, t, &cfg.guidance, p);
            thrust = cmd.thrust;
            if cmd.clamped {
                flags |= sat::THRUST;
            }
            if cmd.guarded {
                flags |= sat::COS_GUARD;
            }
        }
        let input = ControlInput::new(thrust, gamma);
        meas.a_m = sensors.accelerometer(&state, &input, p);
        if !meas.is_finite() {
            return Err(SimError::NonFinite { step: k, t });
        }

        records.push(TraceRecord {
            t,
            state,
            x_d: r.x_d,
            y_d: r.altitude(t),
            theta_d,
            thrust,
            gamma,
            y_hat,
            v_hat,
            theta_hat,
            sensors: meas,
            sat_flags: flags,
        });
        if k == steps {
            break;
        }
        att_filter.step(meas.omega_m, meas.theta_m, dt);
        alt_filter.step(meas.a_m, meas.y_m, dt);

        state = match cfg.variant {
            Variant::Full2d => {
                euler_step(&state, &input, p, dt).map_err(|_| SimError::NonFinite { step: k, t })?
            }
            Variant::ReducedLateral => {
                let mut next = state.advanced(&reduced_lateral_rate(&state, &input, r, p), dt);
                next.theta = wrap_angle(next.theta);
                next
            }
            Variant::ReducedVertical => {
                state.advanced(&reduced_vertical_rate(&state, &input, p), dt)
            }
        };
        if !state.is_finite() {
            return Err(SimError::NonFinite {
                step: k + 1,
                t: t + dt,
            });
        }
    }
    Ok(SimTrace {
        dt,
        climb_rate: r.climb_rate,
        records,
    })
}

/// Altitude error bound used for the convergence flag in summaries [m].
pub const ALTITUDE_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub seed: u64,
    pub samples: usize,
    pub final_time: f64,
    pub final_x_error: f64,
    pub final_y_error: f64,
    /// `max |y - y_d|` after the transient.
    pub max_y_error: f64,
    pub altitude_converged: bool,
    /// `std(theta_hat - theta)` after the transient [deg].
    pub attitude_error_std_deg: f64,
    /// `std(y_hat - y)` after the transient [m].
    pub altitude_error_std: f64,
    pub deflection_saturated_steps: usize,
    pub thrust_clamped_steps: usize,
    pub cos_guard_steps: usize,
    pub lateral: LateralDivergence,
}

impl RunSummary {
    pub fn from_trace(cfg: &ScenarioConfig, trace: &SimTrace) -> Self {
        let last = trace.records.last().expect("trace has at least two rows");
        let errors = trace.tracking_errors();
        let t = trace.times();
        let max_y_error = t
            .iter()
            .zip(&errors.y)
            .filter(|(t, _)| **t >= cfg.transient)
            .fold(0.0f64, |m, (_, e)| m.max(e.abs()));
        let count = |bit: u8| {
            trace
                .records
                .iter()
                .filter(|r| r.sat_flags & bit != 0)
                .count()
        };
        let lateral = if cfg.variant == Variant::ReducedVertical {
            detect_lateral_divergence(&[], &[], cfg.divergence_factor)
        } else {
            detect_lateral_divergence(&t, &errors.x, cfg.divergence_factor)
        };
        Self {
            variant: cfg.variant,
            seed: cfg.seed,
            samples: trace.len(),
            final_time: last.t,
            final_x_error: last.state.x - last.x_d,
            final_y_error: last.state.y - last.y_d,
            max_y_error,
            altitude_converged: max_y_error < ALTITUDE_TOLERANCE,
            attitude_error_std_deg: trace
                .attitude_error_stats(cfg.transient)
                .map_or(f64::NAN, |s| s.std),
            altitude_error_std: trace
                .altitude_error_stats(cfg.transient)
                .map_or(f64::NAN, |s| s.std),
            deflection_saturated_steps: count(sat::DEFLECTION),
            thrust_clamped_steps: count(sat::THRUST),
            cos_guard_steps: count(sat::COS_GUARD),
            lateral,
        }
    }
}

/// `runs` independent scenarios with seeds `cfg.seed + i`, evaluated in parallel.
pub fn run_ensemble(cfg: &ScenarioConfig, runs: usize) -> Vec<Result<RunSummary, SimError>> {
    (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let c = ScenarioConfig {
                seed: cfg.seed.wrapping_add(i),
                ..cfg.clone()
            };
            run_scenario(&c).map(|tr| RunSummary::from_trace(&c, &tr))
        })
        .collect()
}
