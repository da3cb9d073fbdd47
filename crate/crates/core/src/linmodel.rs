//! Linearization about vertical flight and the integral-extended attitude model.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::plant::{ControlInput, PlantState, RocketParams};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix {0} has non-finite entries")]
    NonFinite(&'static str),
}

/// Ordered names for states, inputs and outputs of a [`StateSpace`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Labels {
    pub states: Vec<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl Labels {
    fn from_strs(states: &[&str], inputs: &[&str], outputs: &[&str]) -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            states: own(states),
            inputs: own(inputs),
            outputs: own(outputs),
        }
    }

    fn numbered(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }
}

/// Continuous LTI system `x' = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub labels: Labels,
}

impl StateSpace {
    /// Builds a system with generic `x0, u0, y0` labels.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self, ModelError> {
        let labels = Labels {
            states: Labels::numbered("x", a.nrows()),
            inputs: Labels::numbered("u", b.ncols()),
            outputs: Labels::numbered("y", c.nrows()),
        };
        Self::with_labels(a, b, c, labels)
    }

    pub fn with_labels(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        labels: Labels,
    ) -> Result<Self, ModelError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(ModelError::Dimension(format!(
                "A must be square, got {}x{}",
                n,
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(ModelError::Dimension(format!(
                "B must have {n} rows, got {}",
                b.nrows()
            )));
        }
        if c.ncols() != n {
            return Err(ModelError::Dimension(format!(
                "C must have {n} columns, got {}",
                c.ncols()
            )));
        }
        if labels.states.len() != n
            || labels.inputs.len() != b.ncols()
            || labels.outputs.len() != c.nrows()
        {
            return Err(ModelError::Dimension(
                "label counts do not match matrices".into(),
            ));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(name));
            }
        }
        Ok(Self { a, b, c, labels })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// Nominal state and input for steady vertical climb.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimPoint {
    pub state: PlantState,
    pub input: ControlInput,
}

impl TrimPoint {
    /// Climb at `climb_rate` above `x_d`, evaluated at time `t`.
    pub fn vertical_flight(x_d: f64, climb_rate: f64, t: f64, p: &RocketParams) -> Self {
        Self {
            state: PlantState {
                x: x_d,
                u: 0.0,
                y: climb_rate * t,
                v: climb_rate,
                theta: 0.0,
                omega: 0.0,
            },
            input: ControlInput::hover(p),
        }
    }
}

/// Triple integrator on `(delta theta, delta omega, zeta_theta)` with input
/// `delta gamma` and output `delta theta`.
pub fn attitude_extended_model(p: &RocketParams) -> StateSpace {
    let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
    let b = DMatrix::from_column_slice(3, 1, &[0.0, p.arm * p.weight() / p.inertia, 0.0]);
    let c = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    let labels = Labels::from_strs(
        &["dtheta", "domega", "zeta_theta"],
        &["dgamma"],
        &["dtheta"],
    );
    StateSpace::with_labels(a, b, c, labels).expect("fixed dimensions")
}

/// Analytic Jacobian of the six-equation model at `(s0, c0)`.
///
/// Inputs are ordered `(T, gamma)`; the output matrix is the identity.
pub fn jacobian_linearize(s0: &PlantState, c0: &ControlInput, p: &RocketParams) -> StateSpace {
    let PlantState {
        u, v, theta, omega, ..
    } = *s0;
    let (st, ct) = theta.sin_cos();
    let (sg, cg) = c0.deflection.sin_cos();
    let t = c0.thrust;
    let m = p.mass;
    let g = p.gravity;
    let k = p.arm / p.inertia;

    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(6, 6, &[
        // x    u       y    v       theta               omega
        0.0, ct,     0.0, -st,    -u * st - v * ct,   0.0,
        0.0, 0.0,    0.0, omega,  -g * ct,            v,
        0.0, st,     0.0, ct,     u * ct - v * st,    0.0,
        0.0, -omega, 0.0, 0.0,    g * st,             -u,
        0.0, 0.0,    0.0, 0.0,    0.0,                1.0,
        0.0, 0.0,    0.0, 0.0,    0.0,                0.0,
    ]);
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(6, 2, &[
        0.0,     0.0,
        sg / m,  t * cg / m,
        0.0,     0.0,
        cg / m,  -t * sg / m,
        0.0,     0.0,
        k * sg,  k * t * cg,
    ]);
    let labels = Labels::from_strs(&PlantState::LABELS, &["T", "gamma"], &PlantState::LABELS);
    StateSpace::with_labels(a, b, DMatrix::identity(6, 6), labels).expect("fixed dimensions")
}

/// `[B, AB, ..., A^{n-1} B]`.
pub fn controllability_matrix(ss: &StateSpace) -> DMatrix<f64> {
    let n = ss.states();
    let m = ss.inputs();
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = ss.b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = &ss.a * block;
    }
    out
}

/// Numerical rank with tolerance `max(rows, cols) * eps * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv: DVector<f64> = m.clone().svd(false, false).singular_values;
    let sigma_max = sv.max();
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * sigma_max;
    sv.iter().filter(|&&s| s > tol).count()
}

pub fn controllability_rank(ss: &StateSpace) -> usize {
    numerical_rank(&controllability_matrix(ss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn attitude_model_entries() {
        let ss = attitude_extended_model(&RocketParams::default());
        assert_abs_diff_eq!(ss.b[(1, 0)], 26.16, epsilon = 1e-12);
        assert_eq!(
            ss.a.row(2).iter().copied().collect::<Vec<_>>(),
            vec![-1.0, 0.0, 0.0]
        );
        assert_eq!(controllability_rank(&ss), 3);
        // triple integrator: A is nilpotent, so every eigenvalue is zero
        let a3 = &ss.a * &ss.a * &ss.a;
        assert!(a3.iter().all(|&v| v == 0.0));
        let eig = ss.a.complex_eigenvalues();
        assert!(eig.iter().all(|e| e.norm() < 1e-4), "{eig}");
    }

    #[test]
    fn rank_cases() {
        let null = StateSpace::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 2),
        )
        .unwrap();
        assert_eq!(controllability_rank(&null), 0);
        let di = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        assert_eq!(controllability_rank(&di), 2);
        // input only reaching the second state of a decoupled pair
        let un = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        assert_eq!(controllability_rank(&un), 1);
    }

    #[test]
    fn trim_partials() {
        let p = RocketParams::default();
        let trim = TrimPoint::vertical_flight(2.0, 2.0, 3.0, &p);
        let ss = jacobian_linearize(&trim.state, &trim.input, &p);
        assert_abs_diff_eq!(ss.a[(0, 4)], -2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ss.b[(3, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn trim_blocks_decouple() {
        let p = RocketParams::default();
        let trim = TrimPoint::vertical_flight(2.0, 2.0, 0.0, &p);
        let ss = jacobian_linearize(&trim.state, &trim.input, &p);
        let lateral = [0, 1, 4, 5];
        let longitudinal = [2, 3];
        for &i in &lateral {
            for &j in &longitudinal {
                assert_eq!(ss.a[(i, j)], 0.0, "A[{i},{j}]");
                assert_eq!(ss.a[(j, i)], 0.0, "A[{j},{i}]");
            }
            // thrust magnitude does not enter the lateral mode
            assert_eq!(ss.b[(i, 0)], 0.0);
        }
        for &j in &longitudinal {
            // deflection does not enter the longitudinal mode
            assert_eq!(ss.b[(j, 1)], 0.0);
        }
    }

    #[test]
    fn rejects_inconsistent_dimensions() {
        let r = StateSpace::new(
            DMatrix::zeros(2, 3),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 3),
        );
        assert!(matches!(r, Err(ModelError::Dimension(_))));
        let r = StateSpace::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(1, 2),
        );
        assert!(matches!(r, Err(ModelError::Dimension(_))));
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 0)] = f64::NAN;
        let r = StateSpace::new(a, DMatrix::zeros(2, 1), DMatrix::zeros(1, 2));
        assert_eq!(r, Err(ModelError::NonFinite("A")));
    }
}
