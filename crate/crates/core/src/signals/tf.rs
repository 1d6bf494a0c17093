use nalgebra::DMatrix;
use num_complex::Complex64;

use super::Signal;
use crate::error::{Error, Result};

/// Rational filter `B(z^-1) / A(z^-1)` with coefficients in ascending powers
/// of `z^-1` and `a[0] == 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTransferFunction {
    b: Vec<f64>,
    a: Vec<f64>,
}

impl DiscreteTransferFunction {
    /// Builds the filter and normalizes the denominator so that `a[0] == 1`.
    pub fn new(b: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        if b.is_empty() || a.is_empty() {
            return Err(Error::InvalidParameter("transfer function coefficients must be non-empty".into()));
        }
        if b.iter().chain(&a).any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("transfer function coefficients must be finite".into()));
        }
        let a0 = a[0];
        if a0 == 0.0 {
            return Err(Error::InvalidParameter("leading denominator coefficient must be nonzero".into()));
        }
        let b = b.into_iter().map(|c| c / a0).collect();
        let a = a.into_iter().map(|c| c / a0).collect();
        Ok(Self { b, a })
    }

    /// Builds from coefficients in descending powers of `z`, as transfer
    /// functions are usually printed (`num[0] z^m + ... ; den[0] z^n + ...`).
    pub fn from_positive_powers(num: &[f64], den: &[f64]) -> Result<Self> {
        if num.is_empty() || den.is_empty() {
            return Err(Error::InvalidParameter("transfer function coefficients must be non-empty".into()));
        }
        if num.len() > den.len() {
            return Err(Error::InvalidParameter("improper transfer function (numerator degree > denominator degree)".into()));
        }
        let mut b = vec![0.0; den.len() - num.len()];
        b.extend_from_slice(num);
        Self::new(b, den.to_vec())
    }

    pub fn identity() -> Self {
        Self { b: vec![1.0], a: vec![1.0] }
    }

    pub fn gain(g: f64) -> Result<Self> {
        Self::new(vec![g], vec![1.0])
    }

    /// Pure delay of `d` samples.
    pub fn delay(d: usize) -> Self {
        let mut b = vec![0.0; d + 1];
        b[d] = 1.0;
        Self { b, a: vec![1.0] }
    }

    pub fn numerator(&self) -> &[f64] {
        &self.b
    }

    pub fn denominator(&self) -> &[f64] {
        &self.a
    }

    /// Number of leading zero numerator coefficients, i.e. the input-output delay.
    pub fn input_delay(&self) -> usize {
        self.b.iter().take_while(|&&c| c == 0.0).count()
    }

    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.b.iter().map(|c| c * k).collect(), self.a.clone())
    }

    /// Cascade `self * other`.
    pub fn series(&self, other: &Self) -> Self {
        Self { b: poly_mul(&self.b, &other.b), a: poly_mul(&self.a, &other.a) }
    }

    /// `H(e^{j omega})` for `omega` in `[0, pi]` (radians per sample).
    pub fn freq_response(&self, omega: f64) -> Result<Complex64> {
        if !(0.0..=std::f64::consts::PI + 1e-12).contains(&omega) {
            return Err(Error::InvalidParameter(format!("omega must lie in [0, pi], got {omega}")));
        }
        let num = eval_poly_inv(&self.b, omega);
        let den = eval_poly_inv(&self.a, omega);
        let scale = self.a.iter().map(|c| c.abs()).sum::<f64>();
        if den.norm() <= 1e-13 * scale {
            return Err(Error::PoleOnUnitCircle { omega });
        }
        Ok(num / den)
    }

    /// Causal direct-form filtering from zero initial conditions.
    pub fn filter(&self, x: &Signal) -> Result<Signal> {
        let y = self.filter_slice(x.samples())?;
        Signal::new(x.spec(), y)
    }

    pub(crate) fn filter_slice(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.filter_slice_from(x, 0.0, 0.0)
    }

    /// Direct-form filtering where every sample before the first is taken
    /// as `x_before` on the input and `y_before` on the output.
    fn filter_slice_from(&self, x: &[f64], x_before: f64, y_before: f64) -> Result<Vec<f64>> {
        let (b, a) = (&self.b, &self.a);
        let mut y = vec![0.0; x.len()];
        for k in 0..x.len() {
            let mut acc = 0.0;
            for (i, bi) in b.iter().enumerate() {
                acc += bi * if i <= k { x[k - i] } else { x_before };
            }
            for (i, ai) in a.iter().enumerate().skip(1) {
                acc -= ai * if i <= k { y[k - i] } else { y_before };
            }
            if !acc.is_finite() {
                return Err(Error::Instability { index: k });
            }
            y[k] = acc;
        }
        Ok(y)
    }

    /// Filters as if the first input sample had been applied forever, so no
    /// start-up transient enters the output (requires a stable filter).
    fn filter_slice_steady(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x0 = x.first().copied().unwrap_or(0.0);
        self.filter_slice_from(x, x0, self.dc_gain() * x0)
    }

    /// Zero-phase forward-backward filtering with odd-reflection edge padding
    /// and steady-state initial conditions for both passes.
    pub fn filtfilt(&self, x: &Signal) -> Result<Signal> {
        if !self.is_stable() {
            return Err(Error::UnstableFilter);
        }
        let y = self.filtfilt_slice(x.samples())?;
        Signal::new(x.spec(), y)
    }

    pub(crate) fn filtfilt_slice(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let pad = (3 * self.a.len().max(self.b.len())).min(n.saturating_sub(1));
        let mut padded = Vec::with_capacity(n + 2 * pad);
        padded.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        padded.extend_from_slice(x);
        padded.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let mut y = self.filter_slice_steady(&padded)?;
        y.reverse();
        let mut y = self.filter_slice_steady(&y)?;
        y.reverse();
        Ok(y[pad..pad + n].to_vec())
    }

    /// Schur-Cohn step-down test: all poles strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        let mut p = trim_trailing_zeros(&self.a);
        while p.len() > 1 {
            let m = p.len() - 1;
            let k = p[m] / p[0];
            if !k.is_finite() || k.abs() >= 1.0 {
                return false;
            }
            let denom = 1.0 - k * k;
            p = (0..m).map(|i| (p[i] - k * p[m - i]) / denom).collect();
        }
        true
    }

    /// Poles as eigenvalues of the denominator's companion matrix.
    pub fn poles(&self) -> Vec<Complex64> {
        roots_of(&trim_trailing_zeros(&self.a))
    }

    /// Zeros of the numerator after stripping the input delay.
    pub fn zeros(&self) -> Vec<Complex64> {
        let d = self.input_delay();
        roots_of(&trim_trailing_zeros(&self.b[d.min(self.b.len())..]))
    }
}

/// Multiplies two polynomials given by coefficient sequences.
pub fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, pi) in p.iter().enumerate() {
        for (j, qj) in q.iter().enumerate() {
            out[i + j] += pi * qj;
        }
    }
    out
}

/// `sum_k c[k] e^{-j omega k}`.
fn eval_poly_inv(c: &[f64], omega: f64) -> Complex64 {
    let zinv = Complex64::from_polar(1.0, -omega);
    // Horner in z^-1.
    c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &ck| acc * zinv + ck)
}

fn trim_trailing_zeros(c: &[f64]) -> Vec<f64> {
    let end = c.iter().rposition(|&v| v != 0.0).map_or(0, |i| i + 1);
    c[..end].to_vec()
}

/// Roots in `z` of `c[0] z^m + c[1] z^{m-1} + ... + c[m]`.
fn roots_of(c: &[f64]) -> Vec<Complex64> {
    if c.len() < 2 || c[0] == 0.0 {
        return Vec::new();
    }
    let m = c.len() - 1;
    let mut companion = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        companion[(0, j)] = -c[j + 1] / c[0];
    }
    for i in 1..m {
        companion[(i, i - 1)] = 1.0;
    }
    companion.complex_eigenvalues().iter().copied().collect()
}
