//! Discrete PI feedback `C(z) = kp + ki / (z - 1)` with integrator clamping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::DiscreteTransferFunction;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiController {
    /// V/m
    pub kp: f64,
    /// V/m per sample
    pub ki: f64,
    /// Integrator clamp, V.
    pub windup_limit: f64,
    #[serde(skip)]
    integrator: f64,
}

impl Default for PiController {
    fn default() -> Self {
        Self { kp: 0.12, ki: 0.5e-3, windup_limit: 1.5, integrator: 0.0 }
    }
}

impl PiController {
    pub fn new(kp: f64, ki: f64, windup_limit: f64) -> Result<Self> {
        let c = Self { kp, ki, windup_limit, integrator: 0.0 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.kp, self.ki, self.windup_limit].iter().all(|v| v.is_finite()) || self.windup_limit < 0.0 {
            return Err(Error::InvalidParameter(format!("PI gains must be finite and windup_limit >= 0: {self:?}")));
        }
        Ok(())
    }

    /// Disabled controller (always outputs 0).
    pub fn off() -> Self {
        Self { kp: 0.0, ki: 0.0, windup_limit: 0.0, integrator: 0.0 }
    }

    pub fn integrator(&self) -> f64 {
        self.integrator
    }

    pub fn reset(&mut self) {
        self.integrator = 0.0;
    }

    /// Output uses the integrator from previous samples only; the current
    /// error is accumulated afterwards (the strictly proper `1/(z-1)` term).
    pub fn step(&mut self, e: f64) -> f64 {
        let out = self.kp * e + self.integrator;
        self.integrator = (self.integrator + self.ki * e).clamp(-self.windup_limit, self.windup_limit);
        out
    }

    /// Linear (unclamped) controller as a transfer function.
    pub fn transfer_function(&self) -> Result<DiscreteTransferFunction> {
        // kp + ki z^-1 / (1 - z^-1) = (kp + (ki - kp) z^-1) / (1 - z^-1)
        DiscreteTransferFunction::new(vec![self.kp, self.ki - self.kp], vec![1.0, -1.0])
    }
}

pub fn pi_step(ctrl: &mut PiController, e: f64) -> f64 {
    ctrl.step(e)
}
