//! Linear Kalman filter on the discretized nominal actuator model.
//!
//! Covariance updates use the Joseph form and are symmetrized after every
//! step so the error covariance stays positive semi-definite over long runs.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{Signal, StateSpaceModel};

/// Noise covariances and initial conditions (diagonal).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KalmanTuning {
    /// Process noise variance on position, m^2.
    pub q_position: f64,
    /// Process noise variance on velocity, (m/s)^2.
    pub q_velocity: f64,
    /// Measurement noise variance, m^2.
    pub r: f64,
    pub x0_position: f64,
    pub x0_velocity: f64,
    pub p0_position: f64,
    pub p0_velocity: f64,
}

impl Default for KalmanTuning {
    fn default() -> Self {
        Self {
            q_position: 1e-5,
            q_velocity: 1e4,
            r: 1.0,
            x0_position: 0.0,
            x0_velocity: 0.0,
            p0_position: 0.0,
            p0_velocity: 0.0,
        }
    }
}

impl KalmanTuning {
    pub fn validate(&self) -> Result<()> {
        let vars = [self.q_position, self.q_velocity, self.r, self.p0_position, self.p0_velocity];
        if !vars.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidParameter(format!("Kalman variances must be finite and >= 0: {self:?}")));
        }
        if !(self.x0_position.is_finite() && self.x0_velocity.is_finite()) {
            return Err(Error::InvalidParameter("Kalman initial state must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KalmanConfig {
    pub model: StateSpaceModel,
    pub q: Matrix2<f64>,
    pub r: f64,
    pub x0: Vector2<f64>,
    pub p0: Matrix2<f64>,
}

impl KalmanConfig {
    pub fn new(model: StateSpaceModel, tuning: &KalmanTuning) -> Result<Self> {
        tuning.validate()?;
        Ok(Self {
            model,
            q: Matrix2::from_diagonal(&Vector2::new(tuning.q_position, tuning.q_velocity)),
            r: tuning.r,
            x0: Vector2::new(tuning.x0_position, tuning.x0_velocity),
            p0: Matrix2::from_diagonal(&Vector2::new(tuning.p0_position, tuning.p0_velocity)),
        })
    }

    pub fn initial_state(&self) -> KalmanState {
        KalmanState { x: self.x0, p: self.p0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KalmanState {
    pub x: Vector2<f64>,
    pub p: Matrix2<f64>,
}

impl KalmanState {
    pub fn position(&self) -> f64 {
        self.x[0]
    }
}

/// Time update with the input applied over the elapsed sample.
pub fn kalman_predict(cfg: &KalmanConfig, state: &KalmanState, u: f64) -> KalmanState {
    let a = &cfg.model.a;
    let p = a * state.p * a.transpose() + cfg.q;
    KalmanState { x: cfg.model.step(&state.x, u), p: symmetrize(&p) }
}

/// Measurement update with position measurement `z`.
pub fn kalman_update(cfg: &KalmanConfig, state: &KalmanState, z: f64) -> Result<KalmanState> {
    let c = cfg.model.c;
    let pct = state.p * c.transpose();
    let s = (c * pct)[0] + cfg.r;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Numerical(format!("innovation variance {s} is not positive")));
    }
    let k = pct / s;
    let innovation = z - cfg.model.output(&state.x, 0.0);
    let x = state.x + k * innovation;
    let i_kc = Matrix2::identity() - k * c;
    let p = i_kc * state.p * i_kc.transpose() + k * k.transpose() * cfg.r;
    Ok(KalmanState { x, p: symmetrize(&p) })
}

/// One predict + update cycle: `u_prev` is the input applied since the last
/// measurement, `z` the new measurement.
pub fn kalman_step(cfg: &KalmanConfig, state: &KalmanState, u_prev: f64, z: f64) -> Result<KalmanState> {
    kalman_update(cfg, &kalman_predict(cfg, state, u_prev), z)
}

/// Runs the filter over a trial, returning position estimates. The first
/// sample is an update of the initial prior; each later sample is predicted
/// with the previous input before it is updated.
pub fn kalman_filter_signal(cfg: &KalmanConfig, u: &Signal, z: &Signal) -> Result<Signal> {
    u.check_same_len(z)?;
    let mut out = Vec::with_capacity(z.len());
    let mut state = cfg.initial_state();
    for k in 0..z.len() {
        state = if k == 0 {
            kalman_update(cfg, &state, z.get(0))?
        } else {
            kalman_step(cfg, &state, u.get(k - 1), z.get(k))?
        };
        out.push(state.position());
    }
    Signal::new(z.spec(), out)
}

fn symmetrize(p: &Matrix2<f64>) -> Matrix2<f64> {
    (p + p.transpose()) * 0.5
}
