use approx::assert_abs_diff_eq;
use erocket::control::{AttitudeGains, LqrWeights};
use erocket::linmodel::{attitude_extended_model, StateSpace};
use erocket::plant::RocketParams;
use erocket::riccati::{is_hurwitz, kalman_gain, lqr_gain, solve_care, CareProblem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(v))
}

fn double_integrator() -> StateSpace {
    StateSpace::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    )
    .unwrap()
}

#[test]
fn attitude_lqr_matches_reference_solution() {
    // independent solve of the same problem with a dense reference solver
    let reference = [1.95577619, 0.44668129, -3.16227766];
    let g = AttitudeGains::design(&RocketParams::default(), &LqrWeights::default()).unwrap();
    for (k, r) in g.row().iter().zip(reference) {
        assert_abs_diff_eq!(*k, r, epsilon = 1e-7);
    }
    // printed to four decimals
    for (k, r) in g.row().iter().zip([1.9558, 0.4467, -3.1623]) {
        assert_abs_diff_eq!(*k, r, epsilon = 1e-3);
    }
    // k_i = sqrt(q_zeta / r) for this structure
    assert_abs_diff_eq!(g.k_i, (1000.0f64 / 100.0).sqrt(), epsilon = 1e-10);
}

#[test]
fn attitude_closed_loop_eigenvalues() {
    let g = AttitudeGains::design(&RocketParams::default(), &LqrWeights::default()).unwrap();
    let mut eig: Vec<_> = g
        .closed_loop_matrix(&RocketParams::default())
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect();
    eig.sort_by(|a, b| a.im.total_cmp(&b.im));
    assert_abs_diff_eq!(eig[0].re, -3.7528, epsilon = 1e-4);
    assert_abs_diff_eq!(eig[0].im, -2.3894, epsilon = 1e-4);
    assert_abs_diff_eq!(eig[1].re, -4.1795, epsilon = 1e-4);
    assert_abs_diff_eq!(eig[1].im, 0.0, epsilon = 1e-9);
}

#[test]
fn altitude_filter_riccati_closed_form() {
    let (q, r) = (0.1f64, 1.0f64);
    let prob = CareProblem::new(
        double_integrator().a.transpose(),
        double_integrator().c.transpose(),
        diag(&[0.0, q]),
        scalar(r),
    );
    let sol = solve_care(&prob).unwrap();
    let s2 = std::f64::consts::SQRT_2;
    let expected = DMatrix::from_row_slice(
        2,
        2,
        &[
            s2 * q.powf(0.25) * r.powf(0.75),
            (q * r).sqrt(),
            (q * r).sqrt(),
            s2 * q.powf(0.75) * r.powf(0.25),
        ],
    );
    assert!((&sol.p - &expected).abs().max() < 1e-10, "{}", sol.p);
    let l = kalman_gain(&double_integrator(), &diag(&[0.0, q]), &scalar(r)).unwrap();
    assert_abs_diff_eq!(l[(0, 0)], 0.7953, epsilon = 1e-4);
    assert_abs_diff_eq!(l[(1, 0)], 0.3162, epsilon = 1e-4);
    let eig = (&double_integrator().a - &l * &double_integrator().c).complex_eigenvalues();
    for e in eig.iter() {
        assert_abs_diff_eq!(e.re, -0.3976, epsilon = 1e-4);
        assert_abs_diff_eq!(e.im.abs(), 0.3976, epsilon = 1e-4);
    }
}

#[test]
fn attitude_filter_scalar_solution() {
    let sol = solve_care(&CareProblem::new(
        scalar(0.0),
        scalar(1.0),
        scalar(1e-6),
        scalar(1e-6),
    ))
    .unwrap();
    assert_abs_diff_eq!(sol.p[(0, 0)], 1e-6, epsilon = 1e-15);
    let ss = StateSpace::new(scalar(0.0), scalar(1.0), scalar(1.0)).unwrap();
    let l = kalman_gain(&ss, &scalar(1e-6), &scalar(1e-6)).unwrap();
    assert_abs_diff_eq!(l[(0, 0)], 1.0, epsilon = 1e-8);
}

#[test]
fn gain_shrinks_as_input_weight_grows() {
    let ss = attitude_extended_model(&RocketParams::default());
    let q = DMatrix::identity(3, 3);
    let mut prev = f64::INFINITY;
    for e in -2..=8 {
        let k = lqr_gain(&ss, &q, &scalar(10f64.powi(e))).unwrap();
        let n = k.norm();
        assert!(n < prev, "R = 1e{e}: |K| = {n} not below {prev}");
        prev = n;
    }
}

fn random_system(
    n: usize,
    m: usize,
    seed: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut it = seed.iter().cycle().copied();
    let a = DMatrix::from_fn(n, n, |_, _| it.next().unwrap());
    let b = DMatrix::from_fn(n, m, |_, _| it.next().unwrap());
    let f = DMatrix::from_fn(n, n, |_, _| it.next().unwrap());
    let q = f.transpose() * &f + DMatrix::identity(n, n) * 0.1;
    let g = DMatrix::from_fn(m, m, |_, _| it.next().unwrap());
    let r = g.transpose() * &g + DMatrix::identity(m, m);
    (a, b, q, r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalar_closed_form(a in -3.0f64..3.0, b in 0.2f64..3.0, q in 0.01f64..10.0, r in 0.01f64..10.0) {
        let sol = solve_care(&CareProblem::new(scalar(a), scalar(b), scalar(q), scalar(r))).unwrap();
        let p = r * (a + (a * a + b * b * q / r).sqrt()) / (b * b);
        prop_assert!((sol.p[(0, 0)] - p).abs() <= 1e-9 * p.max(1.0));
    }

    #[test]
    fn residual_bound_and_stability(
        n in 2usize..6, m in 1usize..3,
        entries in prop::collection::vec(-2.0f64..2.0, 64),
    ) {
        let (a, b, q, r) = random_system(n, m, &entries);
        let prob = CareProblem::new(a.clone(), b.clone(), q, r.clone());
        let sol = solve_care(&prob).unwrap();
        prop_assert!(prob.residual(&sol.p) <= 1e-8 * (1.0 + sol.p.norm()));
        prop_assert!((&sol.p - sol.p.transpose()).abs().max() == 0.0);
        let k = r.clone().try_inverse().unwrap() * b.transpose() * &sol.p;
        prop_assert!(is_hurwitz(&(&a - &b * k)));
    }

    #[test]
    fn kalman_is_dual_of_lqr(
        n in 2usize..5,
        entries in prop::collection::vec(-2.0f64..2.0, 64),
    ) {
        let (a, b, q, r) = random_system(n, 1, &entries);
        let c = b.transpose();
        let ss = StateSpace::new(a.clone(), DMatrix::zeros(n, 1), c.clone()).unwrap();
        let l = kalman_gain(&ss, &q, &r).unwrap();
        let dual = StateSpace::new(a.transpose(), c.transpose(), DMatrix::zeros(1, n)).unwrap();
        let k = lqr_gain(&dual, &q, &r).unwrap();
        prop_assert!((&l - k.transpose()).abs().max() <= 1e-10 * (1.0 + l.norm()));
        prop_assert!(is_hurwitz(&(&a - &l * &c)));
    }

    #[test]
    fn weight_scaling_leaves_gain_unchanged(alpha in 1e-3f64..1e3) {
        let ss = attitude_extended_model(&RocketParams::default());
        let q = diag(&[100.0, 5.0, 1000.0]);
        let k1 = lqr_gain(&ss, &q, &scalar(100.0)).unwrap();
        let k2 = lqr_gain(&ss, &(&q * alpha), &scalar(100.0 * alpha)).unwrap();
        let err = (&k1 - &k2).abs().max();
        prop_assert!(err <= 1e-9 * k1.norm().max(1.0), "alpha {} err {}", alpha, err);
    }

    #[test]
    fn closed_forms_match_solver(lq in -4.0f64..1.0, lr in -3.0f64..1.0) {
        let (q, r) = (10f64.powf(lq), 10f64.powf(lr));
        let ss = StateSpace::new(scalar(0.0), scalar(1.0), scalar(1.0)).unwrap();
        let l = kalman_gain(&ss, &scalar(q), &scalar(r)).unwrap();
        prop_assert!((l[(0, 0)] - (q / r).sqrt()).abs() <= 1e-8 * (q / r).sqrt().max(1.0));
        let l = kalman_gain(&double_integrator(), &diag(&[0.0, q]), &scalar(r)).unwrap();
        let ly = std::f64::consts::SQRT_2 * (q / r).powf(0.25);
        prop_assert!((l[(0, 0)] - ly).abs() <= 1e-8 * ly.max(1.0));
        prop_assert!((l[(1, 0)] - (q / r).sqrt()).abs() <= 1e-8 * (q / r).sqrt().max(1.0));
    }
}
