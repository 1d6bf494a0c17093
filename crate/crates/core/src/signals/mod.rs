//! Sampled signals, reference generation and discrete-time LTI building blocks.

mod state_space;
mod tf;

pub use state_space::{c2d_zoh, StateSpaceModel};
pub use tf::{poly_mul, DiscreteTransferFunction};

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform sampling grid of one trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleSpec {
    dt: f64,
    n: usize,
}

impl SampleSpec {
    pub fn new(dt: f64, n: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!("sample interval must be > 0, got {dt}")));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("sample count must be >= 1".into()));
        }
        Ok(Self { dt, n })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fs(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn duration(&self) -> f64 {
        self.n as f64 * self.dt
    }
}

impl Default for SampleSpec {
    /// 1 kHz sampling over a 6 s trial.
    fn default() -> Self {
        Self { dt: 0.001, n: 6000 }
    }
}

/// A finite, uniformly sampled real sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    spec: SampleSpec,
    samples: Vec<f64>,
}

impl Signal {
    pub fn new(spec: SampleSpec, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != spec.n() {
            return Err(Error::LengthMismatch { expected: spec.n(), actual: samples.len() });
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { spec, samples })
    }

    pub fn zeros(spec: SampleSpec) -> Self {
        Self { spec, samples: vec![0.0; spec.n()] }
    }

    pub fn constant(spec: SampleSpec, value: f64) -> Result<Self> {
        Self::new(spec, vec![value; spec.n()])
    }

    pub fn from_fn(spec: SampleSpec, f: impl FnMut(usize) -> f64) -> Result<Self> {
        Self::new(spec, (0..spec.n()).map(f).collect())
    }

    pub fn spec(&self) -> SampleSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn get(&self, k: usize) -> f64 {
        self.samples[k]
    }

    /// Sample-wise combination of two signals of equal length.
    pub fn zip_with(&self, other: &Signal, f: impl Fn(f64, f64) -> f64) -> Result<Signal> {
        self.check_same_len(other)?;
        let samples = self.samples.iter().zip(&other.samples).map(|(&a, &b)| f(a, b)).collect();
        Signal::new(self.spec, samples)
    }

    pub fn add(&self, other: &Signal) -> Result<Signal> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Signal) -> Result<Signal> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Result<Signal> {
        Signal::new(self.spec, self.samples.iter().map(|v| v * k).collect())
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Euclidean norm over `range` only.
    pub fn norm_in(&self, range: std::ops::Range<usize>) -> f64 {
        self.samples[range].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn check_same_len(&self, other: &Signal) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch { expected: self.len(), actual: other.len() });
        }
        Ok(())
    }
}

/// Sinusoidal position command `offset + amplitude * sin(2 pi f t + phase)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceCommand {
    /// m
    pub amplitude: f64,
    /// Hz
    pub frequency: f64,
    /// rad
    #[serde(default)]
    pub phase: f64,
    /// m
    #[serde(default)]
    pub offset: f64,
}

impl ReferenceCommand {
    pub fn new(amplitude: f64, frequency: f64, phase: f64, offset: f64) -> Result<Self> {
        let cmd = Self { amplitude, frequency, phase, offset };
        cmd.validate()?;
        Ok(cmd)
    }

    /// Profile that starts and ends each period at rest: `A (1 - cos(2 pi f t))`.
    pub fn rest_start(amplitude: f64, frequency: f64) -> Result<Self> {
        Self::new(amplitude, frequency, -std::f64::consts::FRAC_PI_2, amplitude)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.amplitude, self.frequency, self.phase, self.offset]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.frequency <= 0.0 || self.amplitude < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "reference needs frequency > 0 and amplitude >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn position_at(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (TAU * self.frequency * t + self.phase).sin()
    }

    pub fn velocity_at(&self, t: f64) -> f64 {
        let w = TAU * self.frequency;
        self.amplitude * w * (w * t + self.phase).cos()
    }
}

/// Samples the reference position and its analytic derivative.
pub fn generate_reference(cmd: &ReferenceCommand, spec: SampleSpec) -> (Signal, Signal) {
    let position = (0..spec.n()).map(|k| cmd.position_at(spec.time(k))).collect();
    let velocity = (0..spec.n()).map(|k| cmd.velocity_at(spec.time(k))).collect();
    // A validated command only produces finite samples.
    (Signal { spec, samples: position }, Signal { spec, samples: velocity })
}

/// Mean squared difference.
pub fn mse(a: &Signal, b: &Signal) -> Result<f64> {
    a.check_same_len(b)?;
    Ok(mse_slices(a.samples(), b.samples()))
}

pub(crate) fn mse_slices(a: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.len() as f64
}
