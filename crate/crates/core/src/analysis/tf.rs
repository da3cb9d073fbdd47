use num_complex::Complex64;

use crate::linmodel::StateSpace;

/// Rational transfer function, coefficients in descending powers of `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl TransferFunction {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Self {
        assert!(
            den.iter().any(|&c| c != 0.0),
            "denominator is identically zero"
        );
        Self { num, den }
    }

    /// `k / s^n`.
    pub fn integrator(k: f64, order: usize) -> Self {
        let mut den = vec![0.0; order + 1];
        den[0] = 1.0;
        Self::new(vec![k], den)
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        polyval(&self.num, s) / polyval(&self.den, s)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.num.iter().map(|c| c * k).collect(), self.den.clone())
    }
}

/// Horner evaluation, descending powers.
pub fn polyval(coeffs: &[f64], s: Complex64) -> Complex64 {
    coeffs
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

/// Anything with a SISO frequency response.
pub trait FrequencyEval {
    /// `H(j w)`, or `None` where the response is undefined.
    fn response(&self, w: f64) -> Option<Complex64>;
}

impl FrequencyEval for TransferFunction {
    fn response(&self, w: f64) -> Option<Complex64> {
        let s = Complex64::new(0.0, w);
        let d = polyval(&self.den, s);
        if d.norm() == 0.0 {
            return None;
        }
        Some(polyval(&self.num, s) / d)
    }
}

impl FrequencyEval for StateSpace {
    /// First input to first output: `C (j w I - A)^{-1} B`.
    fn response(&self, w: f64) -> Option<Complex64> {
        let n = self.states();
        let jw = Complex64::new(0.0, w);
        let resolvent = nalgebra::DMatrix::<Complex64>::from_fn(n, n, |i, j| {
            let a = Complex64::new(-self.a[(i, j)], 0.0);
            if i == j {
                a + jw
            } else {
                a
            }
        });
        let b =
            nalgebra::DVector::<Complex64>::from_fn(n, |i, _| Complex64::new(self.b[(i, 0)], 0.0));
        let lu = resolvent.lu();
        if !lu.is_invertible() {
            return None;
        }
        let x = lu.solve(&b)?;
        let y = (0..n).fold(Complex64::new(0.0, 0.0), |acc, i| {
            acc + x[i] * self.c[(0, i)]
        });
        y.is_finite().then_some(y)
    }
}
