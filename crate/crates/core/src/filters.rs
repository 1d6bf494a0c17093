//! Q-filter construction and application.
//!
//! Two families are available: the fixed fourth-order low-pass coefficients
//! the experiments were published with, and Butterworth low-pass filters
//! synthesized by the bilinear transform with pre-warping. The printed fixed
//! coefficients have a DC gain of 1.15, so by default they are rescaled to
//! unity DC gain.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{DiscreteTransferFunction, Signal};

/// Fixed coefficients in descending powers of `z`.
pub const FIXED_NUMERATOR: [f64; 5] = [0.3e-2, 1e-2, 2e-2, 1e-2, 0.3e-2];
pub const FIXED_DENOMINATOR: [f64; 5] = [1.0, -2.61, 2.72, -1.31, 0.24];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QFilterKind {
    /// The published fourth-order coefficients.
    Fixed,
    /// Synthesized Butterworth low-pass of `order` at `cutoff_hz`.
    Butterworth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QApplication {
    Causal,
    ZeroPhase,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QFilterSpec {
    pub kind: QFilterKind,
    /// Butterworth only.
    pub order: usize,
    /// Butterworth only, Hz.
    pub cutoff_hz: f64,
    pub application: QApplication,
    pub dc_normalize: bool,
}

impl Default for QFilterSpec {
    fn default() -> Self {
        Self { kind: QFilterKind::Fixed, order: 4, cutoff_hz: 40.0, application: QApplication::ZeroPhase, dc_normalize: true }
    }
}

impl QFilterSpec {
    pub fn fixed(dc_normalize: bool) -> Self {
        Self { kind: QFilterKind::Fixed, dc_normalize, ..Self::default() }
    }

    pub fn butterworth(order: usize, cutoff_hz: f64) -> Self {
        Self { kind: QFilterKind::Butterworth, order, cutoff_hz, ..Self::default() }
    }

    pub fn with_application(mut self, application: QApplication) -> Self {
        self.application = application;
        self
    }

    pub fn validate(&self, fs: f64) -> Result<()> {
        if self.kind == QFilterKind::Butterworth {
            if self.order == 0 {
                return Err(Error::InvalidParameter("Butterworth order must be >= 1".into()));
            }
            if !(self.cutoff_hz > 0.0 && self.cutoff_hz < fs / 2.0) {
                return Err(Error::InvalidParameter(format!(
                    "cutoff {} Hz must lie in (0, Nyquist = {} Hz)",
                    self.cutoff_hz,
                    fs / 2.0
                )));
            }
        }
        Ok(())
    }
}

pub fn build_q_filter(spec: &QFilterSpec, fs: f64) -> Result<DiscreteTransferFunction> {
    spec.validate(fs)?;
    let tf = match spec.kind {
        QFilterKind::Fixed => DiscreteTransferFunction::from_positive_powers(&FIXED_NUMERATOR, &FIXED_DENOMINATOR)?,
        QFilterKind::Butterworth => butterworth_lowpass(spec.order, spec.cutoff_hz, fs)?,
    };
    if spec.dc_normalize {
        tf.scaled(1.0 / tf.dc_gain())
    } else {
        Ok(tf)
    }
}

/// Digital Butterworth low-pass via bilinear transform with pre-warped cutoff.
pub fn butterworth_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<DiscreteTransferFunction> {
    if order == 0 || !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "Butterworth needs order >= 1 and 0 < cutoff < fs/2 (order={order}, cutoff={cutoff_hz}, fs={fs})"
        )));
    }
    let n = order as f64;
    let warped = 2.0 * fs * (std::f64::consts::PI * cutoff_hz / fs).tan();
    let mut den = vec![Complex64::new(1.0, 0.0)];
    let mut dc = Complex64::new(1.0, 0.0);
    for k in 1..=order {
        let theta = std::f64::consts::PI * (2.0 * k as f64 + n - 1.0) / (2.0 * n);
        let s = warped * Complex64::from_polar(1.0, theta);
        let z = (2.0 * fs + s) / (2.0 * fs - s);
        // multiply by (1 - z_k z^-1)
        let mut next = vec![Complex64::new(0.0, 0.0); den.len() + 1];
        for (i, c) in den.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * z;
        }
        den = next;
        dc *= 1.0 - z;
    }
    // Numerator K (1 + z^-1)^n with K fixing unit DC gain.
    let gain = dc.re / 2f64.powi(order as i32);
    let b = binomial_row(order).into_iter().map(|c| c * gain).collect();
    DiscreteTransferFunction::new(b, den.iter().map(|c| c.re).collect())
}

fn binomial_row(n: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 0..n {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    row
}

/// A realized Q filter together with how it is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct QFilter {
    pub tf: DiscreteTransferFunction,
    pub application: QApplication,
}

impl QFilter {
    pub fn new(spec: &QFilterSpec, fs: f64) -> Result<Self> {
        Ok(Self { tf: build_q_filter(spec, fs)?, application: spec.application })
    }

    pub fn identity() -> Self {
        Self { tf: DiscreteTransferFunction::identity(), application: QApplication::ZeroPhase }
    }

    pub fn apply(&self, x: &Signal) -> Result<Signal> {
        q_apply(self.application, &self.tf, x)
    }

    /// Response actually realized on the signal: `Q` when causal, `|Q|^2`
    /// when applied forward-backward.
    pub fn effective_response(&self, omega: f64) -> Result<Complex64> {
        let h = self.tf.freq_response(omega)?;
        Ok(match self.application {
            QApplication::Causal => h,
            QApplication::ZeroPhase => Complex64::new(h.norm_sqr(), 0.0),
        })
    }
}

pub fn q_apply(application: QApplication, tf: &DiscreteTransferFunction, x: &Signal) -> Result<Signal> {
    match application {
        QApplication::Causal => tf.filter(x),
        QApplication::ZeroPhase => tf.filtfilt(x),
    }
}
