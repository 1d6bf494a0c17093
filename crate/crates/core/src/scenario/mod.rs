//! Closed-loop trials, ILC iteration loops over task schedules, training
//! corpus construction and neural warm starts.

mod compare;

pub use compare::{compare_modes, iterations_to_threshold, ModeComparison, SwitchComparison};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{kalman_step, kalman_update, KalmanConfig};
use crate::feedback::PiController;
use crate::ilc::{
    check_monotonic_convergence, check_trial_convergence_for, compute_error, effort_decompose, ilc_update,
    linear_effort, ConvergenceReport, ErrorSource, IlcConfig, IlcMemory,
};
use crate::neural::{predict_effort_series, MlpModel, TrainingSet};
use crate::plant::{Actuator, LuGreParams, PlantParams, SensorModel};
use crate::signals::{generate_reference, mse, DiscreteTransferFunction, ReferenceCommand, SampleSpec, Signal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    /// Substep simulation with LuGre friction.
    Lugre,
    /// Substep simulation without friction.
    Frictionless,
    /// Exact discrete linear model (the nominal model itself).
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    FeedbackOnly,
    Ilc,
    IlcWithNn,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::FeedbackOnly => "feedback_only",
            RunMode::Ilc => "ilc",
            RunMode::IlcWithNn => "ilc_with_nn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub reference: ReferenceCommand,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSchedule {
    pub segments: Vec<Segment>,
}

impl TaskSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidParameter("schedule needs at least one segment".into()));
        }
        for (i, s) in segments.iter().enumerate() {
            s.reference.validate()?;
            if s.iterations == 0 {
                return Err(Error::InvalidParameter(format!("segment {i} has zero iterations")));
            }
        }
        Ok(Self { segments })
    }

    pub fn total_iterations(&self) -> usize {
        self.segments.iter().map(|s| s.iterations).sum()
    }

    /// Global index of the first iteration of each segment.
    pub fn segment_starts(&self) -> Vec<usize> {
        self.segments
            .iter()
            .scan(0, |acc, s| {
                let start = *acc;
                *acc += s.iterations;
                Some(start)
            })
            .collect()
    }
}

/// Everything a trial and an ILC loop need, already validated and built.
#[derive(Clone, Debug)]
pub struct LoopSetup {
    pub spec: SampleSpec,
    pub plant: PlantParams,
    pub kind: PlantKind,
    pub lugre: LuGreParams,
    pub noise_variance: f64,
    pub pi: PiController,
    pub kalman: KalmanConfig,
    pub ilc: IlcConfig,
    pub error_source: ErrorSource,
    /// Adds the reference itself to the plant input, so the learned effort
    /// is the correction on top of it.
    pub reference_feedthrough: bool,
    pub master_seed: u64,
    /// Frequency grid size for the stability pre-check.
    pub n_grid: usize,
}

impl LoopSetup {
    pub fn actuator(&self) -> Result<Actuator> {
        Ok(match self.kind {
            PlantKind::Lugre => Actuator::nonlinear(self.plant, Some(self.lugre), self.spec.dt()),
            PlantKind::Frictionless => Actuator::nonlinear(self.plant, None, self.spec.dt()),
            PlantKind::Linear => Actuator::linear(&self.plant, self.spec.dt())?,
        })
    }

    /// Noise seed of global iteration `j`; identical across run modes.
    pub fn trial_seed(&self, j: usize) -> u64 {
        splitmix64(self.master_seed ^ splitmix64(j as u64 + 1))
    }

    /// Linear part of the simulated plant, used as `G` in the diagnostics.
    pub fn true_linear_plant(&self) -> Result<DiscreteTransferFunction> {
        self.plant.discretize(self.spec.dt())?.to_transfer_function()
    }

    /// Both convergence diagnostics for the configured learning loop.
    pub fn stability_report(&self) -> Result<StabilityReport> {
        let g = self.true_linear_plant()?;
        let monotonic = check_monotonic_convergence(&self.ilc, &g, self.n_grid)?;
        let trial = match check_trial_convergence_for(&self.ilc, &g, self.n_grid) {
            Ok(r) => Some(r),
            // A Q with a zero on the unit circle makes sup |1/Q| infinite,
            // so the condition holds trivially; no curve is reported.
            Err(Error::QZeroOnUnitCircle { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(StabilityReport { monotonic, trial })
    }

    pub fn precheck(&self) -> Result<StabilityReport> {
        let report = self.stability_report()?;
        if !report.ok() {
            return Err(Error::ConvergencePrecheck(report.describe()));
        }
        Ok(report)
    }

    pub fn reference(&self, cmd: &ReferenceCommand) -> (Signal, Signal) {
        generate_reference(cmd, self.spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub monotonic: ConvergenceReport,
    pub trial: Option<ConvergenceReport>,
}

impl StabilityReport {
    pub fn monotonic_ok(&self) -> bool {
        self.monotonic.monotonic_ok().unwrap_or(false)
    }

    pub fn trial_ok(&self) -> bool {
        self.trial.as_ref().map(|t| t.trial_ok().unwrap_or(false)).unwrap_or(true)
    }

    pub fn ok(&self) -> bool {
        self.monotonic_ok() && self.trial_ok()
    }

    pub fn describe(&self) -> String {
        let m = self.monotonic.monotonic.as_ref().expect("monotonic part present");
        let worst = m.margin_curve.iter().copied().fold(0.0, f64::max);
        let mut s = format!(
            "monotonic condition {}: max |1/beta - G_hat^-1 G| = {worst:.6} vs 1/beta = {:.6}",
            if m.ok { "holds" } else { "violated" },
            m.bound
        );
        match self.trial.as_ref().and_then(|t| t.trial.as_ref()) {
            Some(t) => s.push_str(&format!(
                "; trial condition {}: sup |1 - LG| = {:.6} vs sup |1/Q| = {:.6}",
                if t.ok { "holds" } else { "violated" },
                t.sup_one_minus_lg,
                t.sup_inv_q
            )),
            None => s.push_str("; trial condition holds trivially (Q vanishes on the unit circle)"),
        }
        s
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Time series of one closed-loop trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialTraces {
    pub t: Vec<f64>,
    pub r: Signal,
    /// True position.
    pub y: Signal,
    pub y_meas: Signal,
    pub y_hat: Signal,
    pub u_fb: Signal,
    /// Total feedforward command (reference feedthrough plus learned effort).
    pub u_ff: Signal,
    /// True velocity.
    pub velocity: Signal,
}

/// Runs one trial from rest. Per step: measure, PI on the raw measurement,
/// add the feedforward, apply (saturated inside the actuator), and update the
/// Kalman estimate with the applied command.
pub fn run_trial(setup: &LoopSetup, r: &Signal, feedforward: &Signal, noise_seed: u64) -> Result<TrialTraces> {
    r.check_same_len(feedforward)?;
    let n = r.len();
    let mut plant = setup.actuator()?;
    let mut pi = setup.pi;
    pi.reset();
    let sensor = SensorModel { noise_variance: setup.noise_variance, rng_seed: noise_seed };
    let mut noise = sensor.stream();
    let mut kf = setup.kalman.initial_state();
    let mut last_u = 0.0;
    let mut cols: [Vec<f64>; 6] = std::array::from_fn(|_| Vec::with_capacity(n));
    for k in 0..n {
        let x = plant.position();
        let z = x + noise.next().expect("noise stream is infinite");
        let u_fb = pi.step(r.get(k) - z);
        let u_ff = feedforward.get(k);
        kf = if k == 0 { kalman_update(&setup.kalman, &kf, z)? } else { kalman_step(&setup.kalman, &kf, last_u, z)? };
        for (c, v) in cols.iter_mut().zip([x, z, kf.position(), u_fb, u_ff, plant.velocity()]) {
            c.push(v);
        }
        last_u = plant.saturate(u_fb + u_ff);
        plant.apply(u_fb + u_ff)?;
    }
    let spec = r.spec();
    let [y, y_meas, y_hat, u_fb, u_ff, velocity] = cols.map(|c| Signal::new(spec, c));
    Ok(TrialTraces {
        t: (0..n).map(|k| spec.time(k)).collect(),
        r: r.clone(),
        y: y?,
        y_meas: y_meas?,
        y_hat: y_hat?,
        u_fb: u_fb?,
        u_ff: u_ff?,
        velocity: velocity?,
    })
}

fn feedforward(setup: &LoopSetup, r: &Signal, effort: &Signal) -> Result<Signal> {
    if setup.reference_feedthrough {
        r.add(effort)
    } else {
        Ok(effort.clone())
    }
}

/// Initial learned effort for a new task in the neural mode: the model-based
/// linear part plus the network's nonlinear estimate when a network is given.
pub fn warm_start_effort(setup: &LoopSetup, cmd: &ReferenceCommand, nn: Option<&MlpModel>) -> Result<Signal> {
    let (r, _) = setup.reference(cmd);
    let u_l = if setup.reference_feedthrough {
        linear_effort(&setup.ilc, &r)?
    } else {
        Signal::new(r.spec(), setup.ilc.inverse.apply(r.samples())?)?
    };
    match nn {
        Some(model) => u_l.add(&predict_effort_series(model, cmd, setup.spec)?),
        None => Ok(u_l),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    /// Global iteration index.
    pub iteration: usize,
    pub segment: usize,
    pub frequency: f64,
    /// Mean squared true tracking error.
    pub mse: f64,
    /// Mean squared learning error (from the configured error source).
    pub mse_learning: f64,
    /// Mean squared error against the raw measurement.
    pub mse_measured: f64,
    pub max_abs_error: f64,
    /// Euclidean norm of the learned effort applied in this trial.
    pub effort_norm: f64,
    pub noise_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// Conventional or feedback-only run: no warm start.
    None,
    /// Linear model part only (no network supplied).
    LinearOnly,
    /// Linear part plus network prediction.
    LinearPlusNetwork,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub mode: RunMode,
    pub warm_start: WarmStart,
    pub records: Vec<IterationRecord>,
    /// Per-trial traces, when requested.
    pub traces: Vec<TrialTraces>,
    pub final_effort: Signal,
}

impl ExperimentResult {
    pub fn mse_history(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mse).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExperimentOptions {
    pub keep_traces: bool,
    /// Run even when the stability pre-check fails.
    pub allow_unstable: bool,
}

pub fn run_ilc_experiment(
    setup: &LoopSetup,
    mode: RunMode,
    schedule: &TaskSchedule,
    nn: Option<&MlpModel>,
    opts: ExperimentOptions,
) -> Result<ExperimentResult> {
    if mode != RunMode::FeedbackOnly && !opts.allow_unstable {
        setup.precheck()?;
    }
    let warm_start = match (mode, nn) {
        (RunMode::IlcWithNn, Some(_)) => WarmStart::LinearPlusNetwork,
        (RunMode::IlcWithNn, None) => WarmStart::LinearOnly,
        _ => WarmStart::None,
    };
    let mut records = Vec::with_capacity(schedule.total_iterations());
    let mut traces = Vec::new();
    let mut mem = IlcMemory::new(Signal::zeros(setup.spec));
    let mut j = 0;
    for (s, seg) in schedule.segments.iter().enumerate() {
        let (r, _) = setup.reference(&seg.reference);
        if mode == RunMode::IlcWithNn && s > 0 {
            mem = IlcMemory::new(warm_start_effort(setup, &seg.reference, nn)?);
        }
        for _ in 0..seg.iterations {
            let seed = setup.trial_seed(j);
            let tr = run_trial(setup, &r, &feedforward(setup, &r, &mem.effort)?, seed)?;
            let true_err = compute_error(&r, &tr.y)?;
            let learn_err = match setup.error_source {
                ErrorSource::KalmanEstimate => compute_error(&r, &tr.y_hat)?,
                ErrorSource::RawMeasurement => compute_error(&r, &tr.y_meas)?,
            };
            records.push(IterationRecord {
                iteration: j,
                segment: s,
                frequency: seg.reference.frequency,
                mse: mse(&r, &tr.y)?,
                mse_learning: mse(&learn_err, &Signal::zeros(setup.spec))?,
                mse_measured: mse(&r, &tr.y_meas)?,
                max_abs_error: true_err.max_abs(),
                effort_norm: mem.effort.norm(),
                noise_seed: seed,
            });
            if mode != RunMode::FeedbackOnly {
                mem = ilc_update(&setup.ilc, &mem, &learn_err)?;
            }
            if opts.keep_traces {
                traces.push(tr);
            }
            j += 1;
        }
    }
    Ok(ExperimentResult { mode, warm_start, records, traces, final_effort: mem.effort })
}

/// Per-frequency outcome of corpus construction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusEntry {
    pub frequency: f64,
    pub converged: bool,
    pub first_mse: f64,
    pub final_mse: f64,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub data: TrainingSet,
    /// Source frequency of every row.
    pub frequency: Vec<f64>,
    pub entries: Vec<CorpusEntry>,
}

/// Relative MSE change below 1% over each of the last three iterations.
pub fn has_converged(mse_history: &[f64]) -> bool {
    if mse_history.len() < 4 {
        return false;
    }
    mse_history.windows(2).rev().take(3).all(|w| (w[1] - w[0]).abs() < 0.01 * w[0].abs())
}

/// Runs conventional ILC at each frequency (in parallel), decomposes the
/// converged effort and collects `(r, r_dot) -> u_n` rows in frequency order.
pub fn build_training_corpus(
    setup: &LoopSetup,
    template: &ReferenceCommand,
    frequencies: &[f64],
    iterations_per_freq: usize,
) -> Result<Corpus> {
    if frequencies.is_empty() || iterations_per_freq == 0 {
        return Err(Error::InvalidParameter("corpus needs frequencies and iterations >= 1".into()));
    }
    let parts = frequencies
        .par_iter()
        .map(|&f| -> Result<(TrainingSet, CorpusEntry)> {
            let cmd = ReferenceCommand { frequency: f, ..*template };
            cmd.validate()?;
            let schedule = TaskSchedule::new(vec![Segment { reference: cmd, iterations: iterations_per_freq }])?;
            let res = run_ilc_experiment(setup, RunMode::Ilc, &schedule, None, ExperimentOptions::default())
                .map_err(|e| match e {
                    Error::ConvergencePrecheck(msg) => Error::ConvergencePrecheck(format!("corpus frequency {f} Hz: {msg}")),
                    other => other,
                })?;
            let (r, v) = setup.reference(&cmd);
            let (_, u_n) = effort_decompose(&setup.ilc, &r, &res.final_effort)?;
            let hist = res.mse_history();
            let features = r.samples().iter().zip(v.samples()).map(|(&p, &d)| [p, d]).collect();
            let set = TrainingSet::new(features, u_n.into_samples())?;
            let entry = CorpusEntry {
                frequency: f,
                converged: has_converged(&hist),
                first_mse: hist[0],
                final_mse: *hist.last().unwrap(),
                rows: set.len(),
            };
            Ok((set, entry))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut corpus = Corpus { data: TrainingSet::default(), frequency: Vec::new(), entries: Vec::new() };
    for (set, entry) in parts {
        corpus.frequency.extend(std::iter::repeat_n(entry.frequency, set.len()));
        corpus.data.extend(&set);
        corpus.entries.push(entry);
    }
    Ok(corpus)
}

/// `n` frequencies uniformly spaced on `[lo, hi]`.
pub fn frequency_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests;
