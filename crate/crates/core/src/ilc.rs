//! Plant-inversion iterative learning control.
//!
//! The update law is `u_{j+1} = Q (u_j + beta * G_hat^-1 e_j)`. The nominal
//! discrete plant `G_hat = z^-d B'(z^-1) / A(z^-1)` has an input delay of
//! `d` samples, so its inverse is the proper filter `A / B'` followed by a
//! time advance of `d` samples. The advance is realized offline by shifting
//! the filtered sequence left and zero-padding the tail.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::QFilter;
use crate::signals::{mse, DiscreteTransferFunction, Signal};

/// Which position signal the learning error is computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSource {
    KalmanEstimate,
    RawMeasurement,
}

/// User-facing learning settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IlcSettings {
    pub beta: f64,
    pub error_source: ErrorSource,
}

impl Default for IlcSettings {
    fn default() -> Self {
        Self { beta: 0.9, error_source: ErrorSource::KalmanEstimate }
    }
}

/// Stable proper part of the model inverse plus the advance that restores it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInverse {
    pub proper: DiscreteTransferFunction,
    pub advance: usize,
}

impl ModelInverse {
    /// Splits `model_hat` into `z^advance * proper`; refuses non-minimum-phase models.
    pub fn new(model_hat: &DiscreteTransferFunction) -> Result<Self> {
        let advance = model_hat.input_delay();
        let b = model_hat.numerator();
        if advance >= b.len() {
            return Err(Error::Inversion("model numerator is identically zero".into()));
        }
        let proper = DiscreteTransferFunction::new(model_hat.denominator().to_vec(), b[advance..].to_vec())?;
        if !proper.is_stable() {
            let worst = proper.poles().iter().map(|p| p.norm()).fold(0.0, f64::max);
            return Err(Error::Inversion(format!(
                "model has a zero of magnitude {worst:.6} on or outside the unit circle; its inverse is unstable"
            )));
        }
        Ok(Self { proper, advance })
    }

    /// Offline application: filter, shift left by `advance`, zero-pad the tail.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let w = self.proper.filter_slice(x)?;
        let mut out = vec![0.0; x.len()];
        if self.advance < x.len() {
            out[..x.len() - self.advance].copy_from_slice(&w[self.advance..]);
        }
        Ok(out)
    }

    pub fn freq_response(&self, omega: f64) -> Result<Complex64> {
        Ok(self.proper.freq_response(omega)? * Complex64::from_polar(1.0, omega * self.advance as f64))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IlcConfig {
    pub beta: f64,
    pub q: QFilter,
    pub model_hat: DiscreteTransferFunction,
    pub inverse: ModelInverse,
}

impl IlcConfig {
    /// `beta` only has to be positive here so that designs outside the
    /// guaranteed band can still be analysed; the scenario pre-check refuses
    /// to run them.
    pub fn new(beta: f64, q: QFilter, model_hat: DiscreteTransferFunction) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be positive and finite, got {beta}")));
        }
        let inverse = ModelInverse::new(&model_hat)?;
        Ok(Self { beta, q, model_hat, inverse })
    }

    pub fn advance(&self) -> usize {
        self.inverse.advance
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(beta, self.q.clone(), self.model_hat.clone())
    }

    /// Frequency response of `beta * G_hat^-1`.
    pub fn learning_response(&self, omega: f64) -> Result<Complex64> {
        Ok(self.inverse.freq_response(omega)? * self.beta)
    }
}

/// Per-trial learning state.
#[derive(Clone, Debug, PartialEq)]
pub struct IlcMemory {
    pub effort: Signal,
    pub error: Signal,
    pub mse_history: Vec<f64>,
    pub iteration: usize,
}

impl IlcMemory {
    pub fn new(effort: Signal) -> Self {
        let error = Signal::zeros(effort.spec());
        Self { effort, error, mse_history: Vec::new(), iteration: 0 }
    }
}

pub fn compute_error(r: &Signal, y: &Signal) -> Result<Signal> {
    r.sub(y)
}

/// `beta * G_hat^-1 e`, realized non-causally.
pub fn apply_learning_function(cfg: &IlcConfig, e: &Signal) -> Result<Signal> {
    let w = cfg.inverse.apply(e.samples())?;
    Signal::new(e.spec(), w.into_iter().map(|v| cfg.beta * v).collect())
}

pub fn ilc_update(cfg: &IlcConfig, mem: &IlcMemory, e: &Signal) -> Result<IlcMemory> {
    mem.effort.check_same_len(e)?;
    let correction = apply_learning_function(cfg, e)?;
    let effort = cfg.q.apply(&mem.effort.add(&correction)?)?;
    let mut mse_history = mem.mse_history.clone();
    mse_history.push(mse(e, &Signal::zeros(e.spec()))?);
    Ok(IlcMemory { effort, error: e.clone(), mse_history, iteration: mem.iteration + 1 })
}

/// Ratio of successive error norms, each measured relative to `e_limit`
/// (pass `None` for a zero limit), over `range` samples.
pub fn error_contraction_ratio(
    e_prev: &Signal,
    e_next: &Signal,
    e_limit: Option<&Signal>,
    range: std::ops::Range<usize>,
) -> Result<f64> {
    e_prev.check_same_len(e_next)?;
    let (prev, next) = match e_limit {
        Some(l) => (e_prev.sub(l)?, e_next.sub(l)?),
        None => (e_prev.clone(), e_next.clone()),
    };
    let denom = prev.norm_in(range.clone());
    if denom == 0.0 {
        return Err(Error::Numerical("previous error has zero norm".into()));
    }
    Ok(next.norm_in(range) / denom)
}

/// Splits a converged effort into the model-explained linear part and the
/// remainder. Since the reference is fed through to the plant input, the
/// linear part is `(G_hat^-1 - 1) y_d`.
pub fn effort_decompose(cfg: &IlcConfig, y_d: &Signal, u_converged: &Signal) -> Result<(Signal, Signal)> {
    y_d.check_same_len(u_converged)?;
    let u_l = linear_effort(cfg, y_d)?;
    let u_n = u_converged.sub(&u_l)?;
    Ok((u_l, u_n))
}

/// `(G_hat^-1 - 1) y_d`.
pub fn linear_effort(cfg: &IlcConfig, y_d: &Signal) -> Result<Signal> {
    let inv = cfg.inverse.apply(y_d.samples())?;
    Signal::new(y_d.spec(), inv.iter().zip(y_d.samples()).map(|(a, b)| a - b).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicReport {
    /// `|1/beta - G_hat^-1 G|` per grid frequency.
    pub margin_curve: Vec<f64>,
    /// `|1/beta|`.
    pub bound: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialReport {
    /// `|Q (1 - LG)|` per grid frequency.
    pub contraction_curve: Vec<f64>,
    pub sup_one_minus_lg: f64,
    pub sup_inv_q: f64,
    /// `sup |1 - LG| < sup |1/Q|`.
    pub ok: bool,
    /// Stronger pointwise check `sup |Q (1 - LG)| < 1`.
    pub pointwise_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub omegas: Vec<f64>,
    pub monotonic: Option<MonotonicReport>,
    pub trial: Option<TrialReport>,
}

impl ConvergenceReport {
    pub fn monotonic_ok(&self) -> Option<bool> {
        self.monotonic.as_ref().map(|m| m.ok)
    }

    pub fn trial_ok(&self) -> Option<bool> {
        self.trial.as_ref().map(|t| t.ok)
    }

    pub fn max_contraction(&self) -> Option<f64> {
        self.trial.as_ref().map(|t| t.contraction_curve.iter().copied().fold(0.0, f64::max))
    }
}

fn grid(n_grid: usize) -> Result<Vec<f64>> {
    if n_grid < 16 {
        return Err(Error::InvalidParameter(format!("frequency grid needs >= 16 points, got {n_grid}")));
    }
    Ok((0..n_grid).map(|i| std::f64::consts::PI * i as f64 / (n_grid - 1) as f64).collect())
}

/// `sup_w |1/beta - G_hat^-1 G| < 1/beta` on a uniform grid over `[0, pi]`.
pub fn check_monotonic_convergence(
    cfg: &IlcConfig,
    g_true: &DiscreteTransferFunction,
    n_grid: usize,
) -> Result<ConvergenceReport> {
    let omegas = grid(n_grid)?;
    let bound = 1.0 / cfg.beta;
    let margin_curve = omegas
        .iter()
        .map(|&w| {
            let ratio = g_true.freq_response(w)? / cfg.model_hat.freq_response(w)?;
            Ok((bound - ratio).norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    let ok = margin_curve.iter().all(|&m| m < bound);
    Ok(ConvergenceReport { omegas, monotonic: Some(MonotonicReport { margin_curve, bound, ok }), trial: None })
}

/// Trial-to-trial condition for a causal `Q` and an `L G` given as a transfer function.
pub fn check_trial_convergence(
    q: &DiscreteTransferFunction,
    l_times_g: &DiscreteTransferFunction,
    n_grid: usize,
) -> Result<ConvergenceReport> {
    trial_report(grid(n_grid)?, |w| q.freq_response(w), |w| l_times_g.freq_response(w))
}

/// Trial-to-trial condition for the realized loop of `cfg` against `g_true`,
/// using the effective Q response (`|Q|^2` for zero-phase application) and
/// the advanced inverse.
pub fn check_trial_convergence_for(
    cfg: &IlcConfig,
    g_true: &DiscreteTransferFunction,
    n_grid: usize,
) -> Result<ConvergenceReport> {
    trial_report(
        grid(n_grid)?,
        |w| cfg.q.effective_response(w),
        |w| Ok(cfg.learning_response(w)? * g_true.freq_response(w)?),
    )
}

fn trial_report(
    omegas: Vec<f64>,
    q: impl Fn(f64) -> Result<Complex64>,
    lg: impl Fn(f64) -> Result<Complex64>,
) -> Result<ConvergenceReport> {
    let mut qs = Vec::with_capacity(omegas.len());
    let mut one_minus = Vec::with_capacity(omegas.len());
    for &w in &omegas {
        qs.push(q(w)?);
        one_minus.push(Complex64::new(1.0, 0.0) - lg(w)?);
    }
    let q_peak = qs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if let Some((i, _)) = qs.iter().enumerate().find(|(_, c)| c.norm() <= 1e-12 * q_peak.max(f64::MIN_POSITIVE)) {
        return Err(Error::QZeroOnUnitCircle { omega: omegas[i] });
    }
    let contraction_curve: Vec<f64> = qs.iter().zip(&one_minus).map(|(q, d)| (q * d).norm()).collect();
    let sup_one_minus_lg = one_minus.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let sup_inv_q = qs.iter().map(|c| 1.0 / c.norm()).fold(0.0, f64::max);
    let pointwise_ok = contraction_curve.iter().all(|&c| c < 1.0);
    Ok(ConvergenceReport {
        omegas,
        monotonic: None,
        trial: Some(TrialReport {
            ok: sup_one_minus_lg < sup_inv_q,
            pointwise_ok,
            contraction_curve,
            sup_one_minus_lg,
            sup_inv_q,
        }),
    })
}
