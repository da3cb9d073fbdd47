//! Frequency- and time-domain verification: Bode data, gain margin, step
//! metrics and estimation-error statistics.

mod pitch;
mod tf;

pub use pitch::{pitch_closed_loop, pitch_open_loop, pitch_open_loop_tf};
pub use tf::{polyval, FrequencyEval, TransferFunction};

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::linmodel::StateSpace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("response not settled: {0}")]
    Unsettled(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// 400 points over `[1e-2, 1e3]` rad/s.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-2, 1e3, 400)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub omega: Vec<f64>,
    pub response: Vec<Complex64>,
    pub magnitude_db: Vec<f64>,
    /// Unwrapped, degrees.
    pub phase_deg: Vec<f64>,
    /// Grid points where the resolvent was singular.
    pub skipped: Vec<f64>,
}

pub fn magnitude_db(h: Complex64) -> f64 {
    20.0 * h.norm().log10()
}

/// Removes jumps larger than 180 degrees between neighbours.
pub fn unwrap_phase(raw_deg: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw_deg.len());
    let mut offset = 0.0;
    for (i, &p) in raw_deg.iter().enumerate() {
        if i > 0 {
            let prev = raw_deg[i - 1] + offset;
            while p + offset - prev > 180.0 {
                offset -= 360.0;
            }
            while p + offset - prev < -180.0 {
                offset += 360.0;
            }
        }
        out.push(p + offset);
    }
    out
}

pub fn frequency_response(sys: &impl FrequencyEval, grid: &[f64]) -> FrequencyResponse {
    let mut omega = Vec::with_capacity(grid.len());
    let mut response = Vec::with_capacity(grid.len());
    let mut skipped = Vec::new();
    for &w in grid {
        match sys.response(w) {
            Some(h) => {
                omega.push(w);
                response.push(h);
            }
            None => {
                warn!("singular resolvent at {w} rad/s, point skipped");
                skipped.push(w);
            }
        }
    }
    let magnitude_db = response.iter().map(|h| magnitude_db(*h)).collect();
    let raw: Vec<f64> = response.iter().map(|h| h.arg().to_degrees()).collect();
    FrequencyResponse {
        omega,
        response,
        magnitude_db,
        phase_deg: unwrap_phase(&raw),
        skipped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainMargin {
    /// `margin_db = -20 log10 |L(j w_pc)|` at the phase crossover `w_pc`.
    /// Negative values mean the loop tolerates a gain *reduction* of that
    /// size before going unstable (conditionally stable loops).
    Finite {
        margin_db: f64,
        crossover: f64,
    },
    Infinite,
}

impl GainMargin {
    pub fn margin_db(&self) -> f64 {
        match self {
            GainMargin::Finite { margin_db, .. } => *margin_db,
            GainMargin::Infinite => f64::INFINITY,
        }
    }

    /// Distance in dB to the nearest instability, regardless of direction.
    pub fn distance_db(&self) -> f64 {
        self.margin_db().abs()
    }

    pub fn crossover(&self) -> Option<f64> {
        match self {
            GainMargin::Finite { crossover, .. } => Some(*crossover),
            GainMargin::Infinite => None,
        }
    }
}

/// Gain margin at the -180 degree (mod 360) phase crossover with the smallest
/// margin. Crossovers are bracketed on `grid` and refined by bisection in
/// `log w`.
pub fn gain_margin(open_loop: &impl FrequencyEval, grid: &[f64]) -> GainMargin {
    let fr = frequency_response(open_loop, grid);
    let mut best: Option<(f64, f64)> = None;
    for i in 0..fr.omega.len().saturating_sub(1) {
        let (p0, p1) = (fr.phase_deg[i], fr.phase_deg[i + 1]);
        // odd multiples of 180 inside [min, max]
        let lo = p0.min(p1);
        let hi = p0.max(p1);
        let mut k = ((lo - 180.0) / 360.0).ceil();
        while 360.0 * k + 180.0 <= hi {
            let target = 360.0 * k + 180.0;
            if let Some(w) = bisect_crossover(open_loop, fr.omega[i], fr.omega[i + 1], p0, target) {
                if let Some(h) = open_loop.response(w) {
                    let gm = -magnitude_db(h);
                    if best.is_none_or(|(b, _)| gm.abs() < b.abs()) {
                        best = Some((gm, w));
                    }
                }
            }
            k += 1.0;
        }
    }
    match best {
        Some((margin_db, crossover)) if margin_db.is_finite() => GainMargin::Finite {
            margin_db,
            crossover,
        },
        _ => GainMargin::Infinite,
    }
}

fn bisect_crossover(
    sys: &impl FrequencyEval,
    mut lo: f64,
    mut hi: f64,
    phase_lo: f64,
    target: f64,
) -> Option<f64> {
    // continuous phase near the bracket, following the unwrapped branch
    let phase = |w: f64| -> Option<f64> {
        let raw = sys.response(w)?.arg().to_degrees();
        let turns = ((phase_lo - raw) / 360.0).round();
        Some(raw + 360.0 * turns)
    };
    let f_lo = phase(lo)? - target;
    if f_lo == 0.0 {
        return Some(lo);
    }
    for _ in 0..200 {
        if (hi - lo) <= 1e-12 * lo {
            break;
        }
        let mid = (lo * hi).sqrt();
        let f_mid = phase(mid)? - target;
        if f_mid == 0.0 {
            return Some(mid);
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some((lo * hi).sqrt())
}

/// Sampled response of `x' = A x + B u`, `y = C x` from rest to a held input,
/// using the exact zero-order-hold discretization.
pub fn step_response(
    ss: &StateSpace,
    amplitude: f64,
    duration: f64,
    dt: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = ss.states();
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&ss.a * dt));
    aug.view_mut((0, n), (n, 1))
        .copy_from(&(ss.b.column(0) * dt));
    let phi = aug.exp();
    let ad = phi.view((0, 0), (n, n)).clone_owned();
    let bd = phi.view((0, n), (n, 1)).clone_owned();
    let steps = (duration / dt).round() as usize;
    let mut x = nalgebra::DVector::zeros(n);
    let mut t = Vec::with_capacity(steps + 1);
    let mut y = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        t.push(k as f64 * dt);
        y.push((ss.c.row(0) * &x)[(0, 0)]);
        x = &ad * x + &bd * amplitude;
    }
    (t, y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// 10% to 90% of the step amplitude [s].
    pub rise_time: f64,
    /// Last exit from the 2% band [s].
    pub settling_time: f64,
    /// Percent of the step amplitude.
    pub overshoot: f64,
    /// `|target - final value|`.
    pub steady_state_error: f64,
}

pub const SETTLING_BAND: f64 = 0.02;

/// Standard step metrics. The last 10% of samples must lie inside the 2% band
/// around the final value.
pub fn step_metrics(t: &[f64], y: &[f64], target: f64) -> Result<StepMetrics, AnalysisError> {
    if t.len() != y.len() || t.len() < 2 {
        return Err(AnalysisError::InvalidInput(
            "need matching time and value samples".into(),
        ));
    }
    let y0 = y[0];
    let y_final = *y.last().unwrap();
    let amplitude = y_final - y0;
    let steady_state_error = (target - y_final).abs();
    let scale = if amplitude.abs() > 1e-12 {
        amplitude.abs()
    } else {
        y_final.abs().max(1e-12)
    };
    let band = SETTLING_BAND * scale;

    let tail_start = y.len() - (y.len() / 10).max(1);
    if let Some((i, v)) = y[tail_start..]
        .iter()
        .enumerate()
        .find(|(_, v)| (*v - y_final).abs() > band)
    {
        return Err(AnalysisError::Unsettled(format!(
            "sample at t = {} deviates {:e} from the final value, band {:e}",
            t[tail_start + i],
            (v - y_final).abs(),
            band
        )));
    }

    if amplitude.abs() <= 1e-12 {
        return Ok(StepMetrics {
            rise_time: 0.0,
            settling_time: 0.0,
            overshoot: 0.0,
            steady_state_error,
        });
    }

    let sign = amplitude.signum();
    let crossing = |level: f64| -> Option<f64> {
        let goal = y0 + level * amplitude;
        y.windows(2).zip(t.windows(2)).find_map(|(yy, tt)| {
            let (a, b) = ((yy[0] - goal) * sign, (yy[1] - goal) * sign);
            (a < 0.0 && b >= 0.0).then(|| tt[0] + (tt[1] - tt[0]) * (-a) / (b - a))
        })
    };
    let rise_time = match (crossing(0.1), crossing(0.9)) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    let settling_time = y
        .iter()
        .rposition(|v| (v - y_final).abs() > band)
        .map_or(0.0, |i| t[(i + 1).min(t.len() - 1)]);
    let peak = y
        .iter()
        .map(|v| (v - y_final) * sign)
        .fold(0.0f64, f64::max);
    Ok(StepMetrics {
        rise_time,
        settling_time,
        overshoot: 100.0 * peak / amplitude.abs(),
        steady_state_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub samples: usize,
}

/// Mean and standard deviation of `estimate - truth` for `t >= discard`.
pub fn error_stats(
    t: &[f64],
    truth: &[f64],
    estimate: &[f64],
    discard: f64,
) -> Result<ErrorStats, AnalysisError> {
    if t.len() != truth.len() || t.len() != estimate.len() {
        return Err(AnalysisError::InvalidInput("series lengths differ".into()));
    }
    let errors: Vec<f64> = t
        .iter()
        .zip(truth.iter().zip(estimate))
        .filter(|(ti, _)| **ti >= discard)
        .map(|(_, (tr, es))| es - tr)
        .collect();
    if errors.len() < 2 {
        return Err(AnalysisError::InvalidInput(format!(
            "fewer than two samples after discarding {discard} s"
        )));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    Ok(ErrorStats {
        mean,
        std: var.sqrt(),
        samples: errors.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn second_order(zeta: f64, wn: f64) -> StateSpace {
        StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -wn * wn, -2.0 * zeta * wn]),
            DMatrix::from_column_slice(2, 1, &[0.0, wn * wn]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn integrator_at_unit_frequency() {
        let tf = TransferFunction::integrator(1.0, 1);
        let fr = frequency_response(&tf, &[1.0]);
        assert_abs_diff_eq!(fr.magnitude_db[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fr.phase_deg[0], -90.0, epsilon = 1e-12);
        assert_eq!(gain_margin(&tf, &default_grid()), GainMargin::Infinite);
    }

    #[test]
    fn singular_points_skipped() {
        let ss = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let fr = frequency_response(&ss, &[0.5, 1.0, 2.0]);
        assert_eq!(fr.skipped, vec![1.0]);
        assert_eq!(fr.omega, vec![0.5, 2.0]);
    }

    #[test]
    fn unwrap_removes_jumps() {
        let p = unwrap_phase(&[170.0, 179.0, -179.0, -170.0]);
        assert_eq!(p, vec![170.0, 179.0, 181.0, 190.0]);
    }

    #[test]
    fn third_order_margin() {
        // L = 1 / (s+1)^3: crossover at sqrt(3), |L| = 1/8, GM = 20 log10 8
        let tf = TransferFunction::new(vec![1.0], vec![1.0, 3.0, 3.0, 1.0]);
        let gm = gain_margin(&tf, &default_grid());
        assert_abs_diff_eq!(gm.crossover().unwrap(), 3f64.sqrt(), epsilon = 1e-8);
        assert_abs_diff_eq!(gm.margin_db(), 20.0 * 8f64.log10(), epsilon = 1e-8);
    }

    #[test]
    fn second_order_overshoot() {
        let zeta: f64 = 0.5;
        let (t, y) = step_response(&second_order(zeta, 2.0), 1.0, 20.0, 1e-3);
        let m = step_metrics(&t, &y, 1.0).unwrap();
        let expected = 100.0 * (-std::f64::consts::PI * zeta / (1.0 - zeta * zeta).sqrt()).exp();
        assert_abs_diff_eq!(m.overshoot, expected, epsilon = 0.05);
        assert_abs_diff_eq!(m.overshoot, 16.3, epsilon = 0.5);
        assert!(m.steady_state_error < 1e-6);
        assert!(m.rise_time > 0.0 && m.settling_time > m.rise_time);
    }

    #[test]
    fn constant_signal_metrics() {
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let m = step_metrics(&t, &vec![1.0; 100], 1.0).unwrap();
        assert_eq!(m.overshoot, 0.0);
        assert_eq!(m.rise_time, 0.0);
        assert_eq!(m.steady_state_error, 0.0);
    }

    #[test]
    fn unsettled_trace_rejected() {
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| (3.0 * t).sin()).collect();
        assert!(matches!(
            step_metrics(&t, &y, 1.0),
            Err(AnalysisError::Unsettled(_))
        ));
    }

    #[test]
    fn stats_basic() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let truth = [0.0; 4];
        let est = [9.0, 1.0, 2.0, 3.0];
        let s = error_stats(&t, &truth, &est, 1.0).unwrap();
        assert_eq!(s.samples, 3);
        assert_abs_diff_eq!(s.mean, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.std, 1.0, epsilon = 1e-15);
        let zero = error_stats(&t, &truth, &truth, 0.0).unwrap();
        assert!(zero.std < 1e-9);
        assert!(error_stats(&t, &truth, &est, 5.0).is_err());
    }

    #[test]
    fn stats_shift_invariant() {
        let t: Vec<f64> = (0..50).map(|k| k as f64).collect();
        let truth: Vec<f64> = t.iter().map(|t| (t * 0.3).sin()).collect();
        let est: Vec<f64> = t
            .iter()
            .map(|t| (t * 0.3).sin() + 0.1 * (t * 1.7).cos())
            .collect();
        let a = error_stats(&t, &truth, &est, 0.0).unwrap();
        let sh = |v: &[f64]| v.iter().map(|x| x + 123.0).collect::<Vec<_>>();
        let b = error_stats(&t, &sh(&truth), &sh(&est), 0.0).unwrap();
        assert_abs_diff_eq!(a.std, b.std, epsilon = 1e-12);
    }
}
