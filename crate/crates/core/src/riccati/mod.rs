//! Continuous-time algebraic Riccati equation
//! `A^T P + P A - P B R^{-1} B^T P + Q = 0`, used for both the LQR gain and the
//! steady-state Kalman gain (through the dual pair `(A^T, C^T)`).
//!
//! The primary route is the stable invariant subspace of the Hamiltonian
//! `[[A, -B R^{-1} B^T], [-Q, -A^T]]`, taken from an ordered real Schur form.
//! When the extracted solution is ill-conditioned or misses the residual bound,
//! Newton-Kleinman iterations refine it.

mod schur;

use log::warn;
use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

use crate::linmodel::StateSpace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiccatiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0} must be symmetric")]
    NotSymmetric(&'static str),
    #[error("Q must be positive semidefinite (min eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),
    #[error("R must be positive definite")]
    NotPositiveDefinite,
    #[error("riccati solver failure: {0}")]
    SolverFailure(String),
    #[error("riccati iteration limit after {iterations} iterations, residual {residual:e}")]
    IterationLimit { iterations: usize, residual: f64 },
}

/// Inputs of one CARE solve. For filter design pass `A^T` and `C^T` as `a`/`b`.
#[derive(Debug, Clone, PartialEq)]
pub struct CareProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CareMethod {
    Schur,
    SchurWithNewtonRefinement,
    Newton,
}

#[derive(Debug, Clone)]
pub struct CareSolution {
    pub p: DMatrix<f64>,
    /// Frobenius norm of the equation residual at `p`.
    pub residual: f64,
    pub method: CareMethod,
    /// Failed stabilizability/detectability tests, if any.
    pub warnings: Vec<String>,
}

impl CareSolution {
    pub fn residual_bound(&self) -> f64 {
        residual_tolerance(&self.p)
    }
}

const NEWTON_MAX_ITER: usize = 50;

fn residual_tolerance(p: &DMatrix<f64>) -> f64 {
    1e-8 * (1.0 + p.norm())
}

impl CareProblem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        Self { a, b, q, r }
    }

    fn validate(&self) -> Result<(), RiccatiError> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(RiccatiError::Dimension("A must be square".into()));
        }
        if self.b.nrows() != n {
            return Err(RiccatiError::Dimension(format!("B must have {n} rows")));
        }
        let m = self.b.ncols();
        if self.q.shape() != (n, n) {
            return Err(RiccatiError::Dimension(format!("Q must be {n}x{n}")));
        }
        if self.r.shape() != (m, m) {
            return Err(RiccatiError::Dimension(format!("R must be {m}x{m}")));
        }
        for (name, mat) in [("Q", &self.q), ("R", &self.r)] {
            if (mat - mat.transpose()).norm() > 1e-12 * (1.0 + mat.norm()) {
                return Err(RiccatiError::NotSymmetric(name));
            }
        }
        if n > 0 {
            let min_eig = symmetrize(&self.q).symmetric_eigenvalues().min();
            if min_eig < -1e-12 * (1.0 + self.q.norm()) {
                return Err(RiccatiError::NotPositiveSemidefinite(min_eig));
            }
        }
        if symmetrize(&self.r).cholesky().is_none() {
            return Err(RiccatiError::NotPositiveDefinite);
        }
        Ok(())
    }

    /// `B R^{-1} B^T`.
    fn gain_weight(&self, r_inv: &DMatrix<f64>) -> DMatrix<f64> {
        &self.b * r_inv * self.b.transpose()
    }

    pub fn residual(&self, p: &DMatrix<f64>) -> f64 {
        let r_inv = self
            .r
            .clone()
            .try_inverse()
            .unwrap_or_else(|| DMatrix::zeros(0, 0));
        let s = self.gain_weight(&r_inv);
        (self.a.transpose() * p + p * &self.a - p * s * p + &self.q).norm()
    }

    /// PBH tests on every eigenvalue with non-negative real part.
    fn structural_warnings(&self) -> Vec<String> {
        let n = self.a.nrows();
        let mut out = Vec::new();
        let spectrum = match schur::real_schur(&self.a) {
            Some((_, t)) => schur::eigenvalues(&t),
            None => return vec!["eigenvalues of A did not converge; PBH tests skipped".into()],
        };
        for lambda in spectrum.iter().map(|&(re, im)| Complex::new(re, im)) {
            if lambda.re < -1e-9 {
                continue;
            }
            let shifted = DMatrix::<Complex<f64>>::from_fn(n, n, |i, j| {
                let d = if i == j {
                    lambda
                } else {
                    Complex::new(0.0, 0.0)
                };
                d - Complex::new(self.a[(i, j)], 0.0)
            });
            let b = self.b.map(|v| Complex::new(v, 0.0));
            let q = self.q.map(|v| Complex::new(v, 0.0));
            let mut ctrb = DMatrix::zeros(n, n + b.ncols());
            ctrb.view_mut((0, 0), (n, n)).copy_from(&shifted);
            ctrb.view_mut((0, n), (n, b.ncols())).copy_from(&b);
            let mut obsv = DMatrix::zeros(2 * n, n);
            obsv.view_mut((0, 0), (n, n)).copy_from(&shifted);
            obsv.view_mut((n, 0), (n, n)).copy_from(&q);
            if complex_rank(&ctrb) < n {
                out.push(format!(
                    "(A, B) fails the PBH stabilizability test at {lambda}"
                ));
            }
            if complex_rank(&obsv) < n {
                out.push(format!(
                    "(A, Q) fails the PBH detectability test at {lambda}"
                ));
            }
        }
        out
    }
}

fn complex_rank(m: &DMatrix<Complex<f64>>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let tol = f64::EPSILON.sqrt() * sv.max().max(1.0);
    sv.iter().filter(|&&s| s > tol).count()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solves the CARE. The returned `P` is symmetric and stabilizing.
pub fn solve_care(prob: &CareProblem) -> Result<CareSolution, RiccatiError> {
    prob.validate()?;
    let warnings = prob.structural_warnings();
    for w in &warnings {
        warn!("{w}; attempting best-effort solve");
    }
    // P(aQ, aR) = a P(Q, R); solving with unit-norm R removes the weight scale
    let sigma = prob.r.norm();
    let normalized = CareProblem::new(
        prob.a.clone(),
        prob.b.clone(),
        &prob.q / sigma,
        &prob.r / sigma,
    );
    let mut sol = solve_normalized(&normalized, warnings)?;
    sol.p *= sigma;
    sol.residual = prob.residual(&sol.p);
    Ok(sol)
}

fn solve_normalized(
    prob: &CareProblem,
    warnings: Vec<String>,
) -> Result<CareSolution, RiccatiError> {
    let n = prob.a.nrows();
    if n == 0 {
        return Ok(CareSolution {
            p: DMatrix::zeros(0, 0),
            residual: 0.0,
            method: CareMethod::Schur,
            warnings,
        });
    }
    let r_inv = prob
        .r
        .clone()
        .try_inverse()
        .ok_or(RiccatiError::NotPositiveDefinite)?;

    match hamiltonian_solution(prob, &r_inv) {
        Ok((p, well_conditioned)) => {
            let residual = prob.residual(&p);
            if well_conditioned && residual <= residual_tolerance(&p) {
                return Ok(CareSolution {
                    p,
                    residual,
                    method: CareMethod::Schur,
                    warnings,
                });
            }
            let k0 = &r_inv * prob.b.transpose() * &p;
            let (p, residual) = newton_kleinman(prob, &r_inv, k0)?;
            Ok(CareSolution {
                p,
                residual,
                method: CareMethod::SchurWithNewtonRefinement,
                warnings,
            })
        }
        Err(err) => {
            // Without a subspace estimate, Newton needs A itself to be stable.
            if !is_hurwitz(&prob.a) {
                return Err(err);
            }
            let k0 = DMatrix::zeros(prob.b.ncols(), n);
            let (p, residual) = newton_kleinman(prob, &r_inv, k0)?;
            Ok(CareSolution {
                p,
                residual,
                method: CareMethod::Newton,
                warnings,
            })
        }
    }
}

/// `P = U21 U11^{-1}` from the stable invariant subspace. The flag is false
/// when `U11` is badly conditioned.
fn hamiltonian_solution(
    prob: &CareProblem,
    r_inv: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, bool), RiccatiError> {
    let n = prob.a.nrows();
    let s = prob.gain_weight(r_inv);
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&prob.a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&prob.q));
    h.view_mut((n, n), (n, n)).copy_from(&(-prob.a.transpose()));

    let axis_band = 1e-8 * h.norm().max(1.0);
    let ordered = schur::ordered_schur(&h, |re| re < 0.0).map_err(|e| {
        RiccatiError::SolverFailure(format!("ordered Schur decomposition failed: {e:?}"))
    })?;
    let eig = schur::eigenvalues(&ordered.t);
    if let Some(e) = eig.iter().find(|e| e.0.abs() <= axis_band) {
        return Err(RiccatiError::SolverFailure(format!(
            "Hamiltonian eigenvalue {:e}{:+e}i on the imaginary axis; the pair is not stabilizable or not detectable",
            e.0, e.1
        )));
    }
    if ordered.selected != n {
        return Err(RiccatiError::SolverFailure(format!(
            "expected {n} stable Hamiltonian eigenvalues, found {}",
            ordered.selected
        )));
    }
    let u11 = ordered.z.view((0, 0), (n, n)).clone_owned();
    let u21 = ordered.z.view((n, 0), (n, n)).clone_owned();
    let sv = u11.clone().svd(false, false).singular_values;
    let cond = sv.max() / sv.min();
    let u11_inv = u11
        .try_inverse()
        .ok_or_else(|| RiccatiError::SolverFailure("stable subspace basis is singular".into()))?;
    let p = symmetrize(&(u21 * u11_inv));
    Ok((p, cond.is_finite() && cond < 1e10))
}

fn newton_kleinman(
    prob: &CareProblem,
    r_inv: &DMatrix<f64>,
    mut k: DMatrix<f64>,
) -> Result<(DMatrix<f64>, f64), RiccatiError> {
    let mut last = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let acl = &prob.a - &prob.b * &k;
        if !is_hurwitz(&acl) {
            return Err(RiccatiError::SolverFailure(
                "Newton-Kleinman iterate is not stabilizing".into(),
            ));
        }
        let rhs = &prob.q + k.transpose() * &prob.r * &k;
        let p = symmetrize(&solve_lyapunov(&acl, &rhs)?);
        last = prob.residual(&p);
        k = r_inv * prob.b.transpose() * &p;
        if last <= residual_tolerance(&p) {
            return Ok((p, last));
        }
    }
    Err(RiccatiError::IterationLimit {
        iterations: NEWTON_MAX_ITER,
        residual: last,
    })
}

/// Solves `A^T X + X A + Q = 0` through its Kronecker form.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, RiccatiError> {
    let n = a.nrows();
    let at = a.transpose();
    let mut sys = DMatrix::zeros(n * n, n * n);
    // column-major vec: (A^T X)_{ij} = sum_l At[i,l] X[l,j]; (X A)_{ij} = sum_l X[i,l] A[l,j]
    for j in 0..n {
        for i in 0..n {
            let row = i + j * n;
            for l in 0..n {
                sys[(row, l + j * n)] += at[(i, l)];
                sys[(row, i + l * n)] += a[(l, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| RiccatiError::SolverFailure("singular Lyapunov operator".into()))?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// All eigenvalues strictly in the open left half-plane.
pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    match schur::real_schur(m) {
        Some((_, t)) => schur::eigenvalues(&t).iter().all(|e| e.0 < 0.0),
        None => false,
    }
}

/// LQR state-feedback gain `K = R^{-1} B^T P` for `u = -K x`.
pub fn lqr_gain(
    ss: &StateSpace,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, RiccatiError> {
    let prob = CareProblem::new(ss.a.clone(), ss.b.clone(), q.clone(), r.clone());
    let sol = solve_care(&prob)?;
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or(RiccatiError::NotPositiveDefinite)?;
    let k = r_inv * ss.b.transpose() * &sol.p;
    if !is_hurwitz(&(&ss.a - &ss.b * &k)) {
        return Err(RiccatiError::SolverFailure("A - BK is not Hurwitz".into()));
    }
    Ok(k)
}

/// Steady-state Kalman gain `L = P C^T R^{-1}` from the filter Riccati
/// equation `P A^T + A P - P C^T R^{-1} C P + Q = 0`.
pub fn kalman_gain(
    ss: &StateSpace,
    q_proc: &DMatrix<f64>,
    r_meas: &DMatrix<f64>,
) -> Result<DMatrix<f64>, RiccatiError> {
    let prob = CareProblem::new(
        ss.a.transpose(),
        ss.c.transpose(),
        q_proc.clone(),
        r_meas.clone(),
    );
    let sol = solve_care(&prob)?;
    let r_inv = r_meas
        .clone()
        .try_inverse()
        .ok_or(RiccatiError::NotPositiveDefinite)?;
    let l = &sol.p * ss.c.transpose() * r_inv;
    if !is_hurwitz(&(&ss.a - &l * &ss.c)) {
        return Err(RiccatiError::SolverFailure("A - LC is not Hurwitz".into()));
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_integrator_dual() {
        for (q, r) in [(1e-6, 1e-6), (2.0, 0.5), (0.1, 3.0)] {
            let sol = solve_care(&CareProblem::new(
                scalar(0.0),
                scalar(1.0),
                scalar(q),
                scalar(r),
            ))
            .unwrap();
            assert_abs_diff_eq!(
                sol.p[(0, 0)],
                (q * r).sqrt(),
                epsilon = 1e-12 * (1.0 + (q * r).sqrt())
            );
        }
    }

    #[test]
    fn already_stable_zero_cost() {
        let sol = solve_care(&CareProblem::new(
            scalar(-1.0),
            scalar(1.0),
            scalar(0.0),
            scalar(1.0),
        ))
        .unwrap();
        assert_abs_diff_eq!(sol.p[(0, 0)], 0.0, epsilon = 1e-14);
        assert_eq!(sol.method, CareMethod::Schur);
    }

    #[test]
    fn unstabilizable_is_an_error() {
        let err = solve_care(&CareProblem::new(
            scalar(1.0),
            scalar(0.0),
            scalar(1.0),
            scalar(1.0),
        ))
        .unwrap_err();
        assert!(matches!(err, RiccatiError::SolverFailure(_)), "{err}");
        let err = solve_care(&CareProblem::new(
            scalar(0.0),
            scalar(0.0),
            scalar(1.0),
            scalar(1.0),
        ))
        .unwrap_err();
        assert!(matches!(err, RiccatiError::SolverFailure(_)), "{err}");
    }

    #[test]
    fn undetectable_mode_warns() {
        // unstable mode invisible to Q: the stabilizing solution still exists
        // but the PBH detectability test must flag it
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]));
        let sol = solve_care(&CareProblem::new(a, b, q, scalar(1.0))).unwrap();
        assert!(sol.warnings.iter().any(|w| w.contains("detectability")));
    }

    #[test]
    fn input_validation() {
        let non_sym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert_eq!(
            solve_care(&CareProblem::new(
                a.clone(),
                b.clone(),
                non_sym,
                scalar(1.0)
            ))
            .unwrap_err(),
            RiccatiError::NotSymmetric("Q")
        );
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(
            solve_care(&CareProblem::new(a.clone(), b.clone(), neg, scalar(1.0))).unwrap_err(),
            RiccatiError::NotPositiveSemidefinite(_)
        ));
        assert_eq!(
            solve_care(&CareProblem::new(
                a.clone(),
                b.clone(),
                DMatrix::identity(2, 2),
                scalar(0.0)
            ))
            .unwrap_err(),
            RiccatiError::NotPositiveDefinite
        );
        assert!(matches!(
            solve_care(&CareProblem::new(
                a,
                b,
                DMatrix::identity(3, 3),
                scalar(1.0)
            ))
            .unwrap_err(),
            RiccatiError::Dimension(_)
        ));
    }

    #[test]
    fn lyapunov_scalar() {
        // -2 x + 1 = 0
        let x = solve_lyapunov(&scalar(-1.0), &scalar(1.0)).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn newton_refinement_agrees_with_schur() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.5]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = scalar(0.3);
        let prob = CareProblem::new(a.clone(), b, q, r.clone());
        let schur = solve_care(&prob).unwrap();
        let r_inv = r.try_inverse().unwrap();
        let (p, res) = newton_kleinman(&prob, &r_inv, DMatrix::zeros(1, 2)).unwrap();
        assert!(res <= residual_tolerance(&p));
        assert!((p - schur.p).norm() < 1e-9);
    }
}
