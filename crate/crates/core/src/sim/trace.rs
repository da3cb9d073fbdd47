use std::io::Write;

use serde::Serialize;

use crate::analysis::{error_stats, ErrorStats};
use crate::control::TrackingErrors;
use crate::plant::PlantState;

/// One set of sensor readings. `x` and `u` are passed through exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SensorSample {
    pub omega_m: f64,
    pub theta_m: f64,
    pub a_m: f64,
    pub y_m: f64,
    pub x: f64,
    pub u: f64,
}

impl SensorSample {
    pub fn is_finite(&self) -> bool {
        [
            self.omega_m,
            self.theta_m,
            self.a_m,
            self.y_m,
            self.x,
            self.u,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub mod sat {
    pub const DEFLECTION: u8 = 1;
    pub const THRUST: u8 = 2;
    pub const COS_GUARD: u8 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub state: PlantState,
    pub x_d: f64,
    pub y_d: f64,
    pub theta_d: f64,
    pub thrust: f64,
    pub gamma: f64,
    pub y_hat: f64,
    pub v_hat: f64,
    pub theta_hat: f64,
    pub sensors: SensorSample,
    /// Bitmask of [`sat`] flags.
    pub sat_flags: u8,
}

pub const CSV_COLUMNS: [&str; 20] = [
    "t",
    "x",
    "u",
    "y",
    "v",
    "theta",
    "omega",
    "x_d",
    "y_d",
    "theta_d",
    "T",
    "gamma",
    "y_hat",
    "v_hat",
    "theta_hat",
    "y_m",
    "theta_m",
    "omega_m",
    "a_m",
    "sat_flags",
];

impl TraceRecord {
    /// Float columns in CSV order, without `sat_flags`.
    pub fn values(&self) -> [f64; 19] {
        let s = &self.state;
        [
            self.t,
            s.x,
            s.u,
            s.y,
            s.v,
            s.theta,
            s.omega,
            self.x_d,
            self.y_d,
            self.theta_d,
            self.thrust,
            self.gamma,
            self.y_hat,
            self.v_hat,
            self.theta_hat,
            self.sensors.y_m,
            self.sensors.theta_m,
            self.sensors.omega_m,
            self.sensors.a_m,
        ]
    }

    /// Inertial climb rate.
    pub fn y_rate(&self) -> f64 {
        self.state.inertial_velocity()[1]
    }
}

/// Formats with `digits` significant digits, shortest of fixed or scientific.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let exp: i32 = sci
        .split_once('e')
        .map_or(0, |(_, e)| e.parse().unwrap_or(0));
    if (-5..digits as i32).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        if fixed.contains('.') {
            fixed
                .trim_end_matches('0')
                .trim_end_matches('.')
                .to_string()
        } else {
            fixed
        }
    } else {
        let (mant, e) = sci.split_once('e').unwrap();
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}e{e}")
    }
}

/// Per-step record of one closed-loop run on a uniform grid `t_k = k dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub dt: f64,
    /// Reference climb rate, the slope of `y_d`.
    pub climb_rate: f64,
    pub records: Vec<TraceRecord>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn column(&self, f: impl Fn(&TraceRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.column(|r| r.t)
    }

    pub fn tracking_errors(&self) -> TrackingErrors {
        TrackingErrors {
            x: self.column(|r| r.state.x - r.x_d),
            y: self.column(|r| r.state.y - r.y_d),
            y_rate: self.column(|r| r.y_rate() - self.climb_rate),
        }
    }

    /// Statistics of `theta_hat - theta` in degrees.
    pub fn attitude_error_stats(&self, discard: f64) -> Option<ErrorStats> {
        let t = self.times();
        let truth = self.column(|r| r.state.theta.to_degrees());
        let est = self.column(|r| r.theta_hat.to_degrees());
        error_stats(&t, &truth, &est, discard).ok()
    }

    /// Statistics of `y_hat - y` in metres.
    pub fn altitude_error_stats(&self, discard: f64) -> Option<ErrorStats> {
        let t = self.times();
        error_stats(
            &t,
            &self.column(|r| r.state.y),
            &self.column(|r| r.y_hat),
            discard,
        )
        .ok()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        let mut row: Vec<String> = Vec::with_capacity(CSV_COLUMNS.len());
        for r in &self.records {
            row.clear();
            row.extend(r.values().iter().map(|v| format_significant(*v, 9)));
            row.push(r.sat_flags.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Extremum of one half-cycle of the lateral error about zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HalfCycle {
    pub t_peak: f64,
    /// Signed extremum of `x - x_d`.
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LateralDivergence {
    pub flagged: bool,
    /// `|x~|` exceeded `factor * |x~(0)|`.
    pub exceeded_bound: bool,
    /// Same-sign peaks grew by more than [`PEAK_GROWTH`] every cycle.
    pub growing_oscillation: bool,
    /// First time either condition held.
    pub time: Option<f64>,
    /// Half-cycles after the first zero crossing; the last may be incomplete.
    pub half_cycles: Vec<HalfCycle>,
}

/// Relative growth between same-sign peaks counted as divergence.
pub const PEAK_GROWTH: f64 = 0.05;

/// Hysteresis for zero crossings, as a fraction of the largest excursion.
const CROSSING_HYSTERESIS: f64 = 0.02;

/// Flags a lateral error that leaves `factor` times its initial magnitude or
/// oscillates about zero with same-sign peaks growing cycle over cycle (at
/// least two consecutive same-sign comparisons).
pub fn detect_lateral_divergence(t: &[f64], err: &[f64], factor: f64) -> LateralDivergence {
    let e0 = err.first().copied().unwrap_or(0.0).abs();
    let bound_time = (e0 > 0.0)
        .then(|| {
            t.iter()
                .zip(err)
                .find(|(_, e)| e.abs() > factor * e0)
                .map(|(t, _)| *t)
        })
        .flatten();

    let span = err.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let h = CROSSING_HYSTERESIS * span;
    let mut half_cycles: Vec<HalfCycle> = Vec::new();
    let mut side = 0i8; // sign of the current half-cycle, 0 before leaving the band
    let mut started = false;
    for (&ti, &e) in t.iter().zip(err) {
        let s = if e > h {
            1
        } else if e < -h {
            -1
        } else {
            0
        };
        if s != 0 && s != side {
            if side != 0 {
                started = true;
            }
            side = s;
            if started {
                half_cycles.push(HalfCycle {
                    t_peak: ti,
                    peak: e,
                });
            }
            continue;
        }
        if let Some(last) = half_cycles.last_mut().filter(|_| started && s == side) {
            if e.abs() > last.peak.abs() {
                *last = HalfCycle {
                    t_peak: ti,
                    peak: e,
                };
            }
        }
    }

    let mut growth_time = None;
    let mut pairs: Vec<(f64, f64, f64)> = half_cycles
        .windows(3)
        .map(|w| (w[0].peak.abs(), w[2].peak.abs(), w[2].t_peak))
        .collect();
    // the run may end inside the last half-cycle; keep it only once it has grown
    if pairs
        .last()
        .is_some_and(|(a, b, _)| *b <= (1.0 + PEAK_GROWTH) * a)
    {
        pairs.pop();
    }
    let growing = pairs.len() >= 2 && pairs.iter().all(|(a, b, _)| *b > (1.0 + PEAK_GROWTH) * a);
    if growing {
        growth_time = Some(pairs[1].2);
    }
    let time = match (bound_time, growth_time) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    LateralDivergence {
        flagged: bound_time.is_some() || growing,
        exceeded_bound: bound_time.is_some(),
        growing_oscillation: growing,
        time,
        half_cycles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(format_significant(0.0, 9), "0");
        assert_eq!(format_significant(1.0, 9), "1");
        assert_eq!(format_significant(-2.5, 9), "-2.5");
        assert_eq!(format_significant(1.0 / 3.0, 9), "0.333333333");
        assert_eq!(format_significant(123456.789012, 9), "123456.789");
        assert_eq!(format_significant(1.23456789012e-7, 9), "1.23456789e-7");
        assert_eq!(format_significant(6.02e23, 9), "6.02e23");
        for v in [1.0 / 7.0, -9.81e-3, 19.62, 4.2e12, 3.3e-9] {
            let parsed: f64 = format_significant(v, 9).parse().unwrap();
            assert!(((parsed - v) / v).abs() < 5e-9, "{v}");
        }
    }

    fn sampled(f: impl Fn(f64) -> f64, end: f64) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..=(end * 100.0) as usize)
            .map(|k| k as f64 * 0.01)
            .collect();
        let e = t.iter().map(|t| f(*t)).collect();
        (t, e)
    }

    #[test]
    fn monotone_decay_is_clear() {
        let (t, e) = sampled(|t| -2.0 * (-t).exp(), 30.0);
        let d = detect_lateral_divergence(&t, &e, 10.0);
        assert!(!d.flagged);
        assert!(d.half_cycles.is_empty());
    }

    #[test]
    fn damped_oscillation_is_clear() {
        let (t, e) = sampled(|t| -2.0 * (-0.1 * t).exp() * t.cos(), 60.0);
        assert!(!detect_lateral_divergence(&t, &e, 10.0).flagged);
    }

    #[test]
    fn growing_oscillation_is_flagged() {
        let (t, e) = sampled(|t| -2.0 * (0.02 * t).exp() * (0.5 * t).cos(), 60.0);
        let d = detect_lateral_divergence(&t, &e, 10.0);
        assert!(
            d.flagged && d.growing_oscillation && !d.exceeded_bound,
            "{d:?}"
        );
        assert!(d.half_cycles.len() >= 4);
        // peaks alternate in sign
        assert!(d
            .half_cycles
            .windows(2)
            .all(|w| w[0].peak * w[1].peak < 0.0));
    }

    #[test]
    fn runaway_is_flagged() {
        let (t, e) = sampled(|t| -2.0 * (0.1 * t).exp(), 30.0);
        let d = detect_lateral_divergence(&t, &e, 10.0);
        assert!(d.flagged && d.exceeded_bound);
        assert!((d.time.unwrap() - 10f64.ln() / 0.1).abs() < 0.02);
    }
}
