//! The subcommands. Each computes everything first, stages its files, and
//! writes them in one final commit.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nnilc::config::ExperimentConfig;
use nnilc::filters::build_q_filter;
use nnilc::neural::{fit, model_from_text, model_to_text, MlpModel, TrainingSet};
use nnilc::scenario::{
    build_training_corpus, compare_modes, run_ilc_experiment, CorpusEntry, ExperimentOptions, ExperimentResult,
    IterationRecord, ModeComparison, RunMode, TrialTraces, WarmStart,
};
use serde::Serialize;

use crate::config_io::{load_config, resolved_toml};
use crate::output::{fmt_f64, Staged};
use crate::{Common, ConfigError, StabilityRefusal};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const CORPUS_HEADER: [&str; 4] = ["r", "r_dot", "u_n", "frequency"];
pub const TRACE_HEADER: [&str; 7] = ["t", "r", "y", "y_meas", "y_hat", "u_fb", "u_ff"];
/// Per-step tolerance of the "non-increasing" MSE summary flag.
pub const MONOTONE_TOLERANCE: f64 = 0.05;
/// Threshold factor (times the converged MSE) for iterations-to-threshold.
pub const THRESHOLD_FACTOR: f64 = 1.2;

fn output_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    match (&common.out, cfg.output_dir.as_str()) {
        (Some(dir), _) => dir.clone(),
        (None, "") => PathBuf::from("nnilc-out"),
        (None, dir) => PathBuf::from(dir),
    }
}

fn stage_config(staged: &mut Staged, cfg: &ExperimentConfig) -> Result<()> {
    staged.add(RESOLVED_CONFIG, resolved_toml(cfg)?);
    Ok(())
}

fn read_input(path: &Path, what: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {what} {}: {e}", path.display())).into())
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let text = read_input(path, "model")?;
    model_from_text(&text).with_context(|| format!("in model {}", path.display()))
}

fn options(cfg: &ExperimentConfig, keep_traces: bool) -> ExperimentOptions {
    ExperimentOptions { keep_traces, allow_unstable: cfg.checks.allow_unstable }
}

fn trace_rows(tr: &TrialTraces) -> impl Iterator<Item = Vec<String>> + '_ {
    (0..tr.t.len()).map(move |k| {
        [tr.t[k], tr.r.get(k), tr.y.get(k), tr.y_meas.get(k), tr.y_hat.get(k), tr.u_fb.get(k), tr.u_ff.get(k)]
            .into_iter()
            .map(fmt_f64)
            .collect()
    })
}

pub fn non_increasing_within(mse: &[f64], tolerance: f64) -> bool {
    mse.windows(2).all(|w| w[1] <= (1.0 + tolerance) * w[0])
}

/// [`non_increasing_within`] applied inside each schedule segment; a
/// reference switch is allowed to raise the MSE.
pub fn segments_non_increasing(records: &[IterationRecord], tolerance: f64) -> bool {
    records
        .chunk_by(|a, b| a.segment == b.segment)
        .all(|seg| non_increasing_within(&seg.iter().map(|r| r.mse).collect::<Vec<_>>(), tolerance))
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    mode: RunMode,
    warm_start: WarmStart,
    iterations: usize,
    mse: Vec<f64>,
    /// MSE non-increasing within `tolerance` per step inside every segment.
    non_increasing_within_tolerance: bool,
    tolerance: f64,
    records: &'a [IterationRecord],
    config: &'a ExperimentConfig,
}

pub fn simulate(common: &Common, model: Option<&Path>) -> Result<Vec<PathBuf>> {
    let cfg = load_config(&common.config)?;
    let setup = cfg.build_setup().map_err(|e| ConfigError(e.to_string()))?;
    let schedule = cfg.schedule()?;
    let nn = model.map(load_model).transpose()?;
    let mode = cfg.schedule.mode;
    let res = run_ilc_experiment(&setup, mode, &schedule, nn.as_ref(), options(&cfg, true))?;

    let mut staged = Staged::new();
    stage_config(&mut staged, &cfg)?;
    for (j, tr) in res.traces.iter().enumerate() {
        staged.add_csv(format!("traces/trial_{j:03}.csv"), &TRACE_HEADER, trace_rows(tr))?;
    }
    let mse = res.mse_history();
    staged.add_json(
        "summary.json",
        &SimulateSummary {
            mode,
            warm_start: res.warm_start,
            iterations: res.records.len(),
            non_increasing_within_tolerance: segments_non_increasing(&res.records, MONOTONE_TOLERANCE),
            tolerance: MONOTONE_TOLERANCE,
            mse,
            records: &res.records,
            config: &cfg,
        },
    )?;
    staged.commit(&output_dir(common, &cfg))
}

#[derive(Serialize)]
struct CorpusSummary<'a> {
    rows: usize,
    frequencies: usize,
    all_converged: bool,
    entries: &'a [CorpusEntry],
    config: &'a ExperimentConfig,
}

pub fn build_corpus(common: &Common) -> Result<Vec<PathBuf>> {
    let cfg = load_config(&common.config)?;
    let setup = cfg.build_setup().map_err(|e| ConfigError(e.to_string()))?;
    let freqs = cfg.corpus_frequencies();
    let first = *freqs.first().ok_or_else(|| ConfigError("corpus frequency grid is empty".into()))?;
    let template = cfg.reference.command(first)?;
    let corpus = build_training_corpus(&setup, &template, &freqs, cfg.corpus.iterations_per_frequency)?;

    let mut staged = Staged::new();
    stage_config(&mut staged, &cfg)?;
    let rows = corpus
        .data
        .features
        .iter()
        .zip(&corpus.data.targets)
        .zip(&corpus.frequency)
        .map(|((x, u), f)| vec![fmt_f64(x[0]), fmt_f64(x[1]), fmt_f64(*u), fmt_f64(*f)]);
    staged.add_csv("corpus.csv", &CORPUS_HEADER, rows)?;
    staged.add_json(
        "corpus_summary.json",
        &CorpusSummary {
            rows: corpus.data.len(),
            frequencies: corpus.entries.len(),
            all_converged: corpus.entries.iter().all(|e| e.converged),
            entries: &corpus.entries,
            config: &cfg,
        },
    )?;
    staged.commit(&output_dir(common, &cfg))
}

/// Reads a corpus CSV; errors name the offending data row.
pub fn read_corpus(path: &Path) -> Result<TrainingSet> {
    let text = read_input(path, "corpus")?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| ConfigError(format!("corpus header: {e}")))?;
    if header.iter().collect::<Vec<_>>() != CORPUS_HEADER {
        return Err(ConfigError(format!("corpus header must be {}", CORPUS_HEADER.join(","))).into());
    }
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let bad = |msg: String| ConfigError(format!("corpus row {row} (line {}): {msg}", row + 1));
        let record = record.map_err(|e| bad(e.to_string()))?;
        let values = record
            .iter()
            .map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad("expected finite numbers".into()))?;
        if values.len() != CORPUS_HEADER.len() {
            return Err(bad(format!("expected {} fields, found {}", CORPUS_HEADER.len(), values.len())).into());
        }
        features.push([values[0], values[1]]);
        targets.push(values[2]);
    }
    if features.is_empty() {
        return Err(ConfigError("corpus has no data rows".into()).into());
    }
    Ok(TrainingSet::new(features, targets)?)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    rows: usize,
    epochs: usize,
    initial_loss: f64,
    final_loss: f64,
    parameters: usize,
    config: &'a ExperimentConfig,
}

pub fn train(common: &Common, corpus: &Path) -> Result<Vec<PathBuf>> {
    let cfg = load_config(&common.config)?;
    let data = read_corpus(corpus)?;
    let init = cfg.nn.init_model()?;
    let (model, curve) = fit(&init, &data, &cfg.training)?;

    let mut staged = Staged::new();
    stage_config(&mut staged, &cfg)?;
    staged.add("model.txt", model_to_text(&model));
    staged.add_csv(
        "loss_curve.csv",
        &["epoch", "loss"],
        curve.iter().enumerate().map(|(e, l)| vec![(e + 1).to_string(), fmt_f64(*l)]),
    )?;
    staged.add_json(
        "train_summary.json",
        &TrainSummary {
            rows: data.len(),
            epochs: curve.len(),
            initial_loss: curve.first().copied().unwrap_or(f64::NAN),
            final_loss: curve.last().copied().unwrap_or(f64::NAN),
            parameters: model.params().len(),
            config: &cfg,
        },
    )?;
    staged.commit(&output_dir(common, &cfg))
}

#[derive(Serialize)]
struct ModeRun<'a> {
    mode: RunMode,
    warm_start: WarmStart,
    records: &'a [IterationRecord],
}

impl<'a> ModeRun<'a> {
    fn of(res: &'a ExperimentResult) -> Self {
        Self { mode: res.mode, warm_start: res.warm_start, records: &res.records }
    }
}

#[derive(Serialize)]
struct ExperimentSummary<'a> {
    model_supplied: bool,
    comparison: &'a ModeComparison,
    conventional: ModeRun<'a>,
    nn: ModeRun<'a>,
    config: &'a ExperimentConfig,
}

pub fn run_experiment(common: &Common, model: Option<&Path>) -> Result<Vec<PathBuf>> {
    let cfg = load_config(&common.config)?;
    let setup = cfg.build_setup().map_err(|e| ConfigError(e.to_string()))?;
    let schedule = cfg.schedule()?;
    let nn = model.map(load_model).transpose()?;
    let opts = options(&cfg, false);
    let conv = run_ilc_experiment(&setup, RunMode::Ilc, &schedule, None, opts)?;
    let warm = run_ilc_experiment(&setup, RunMode::IlcWithNn, &schedule, nn.as_ref(), opts)?;
    let comparison = compare_modes(&schedule, &conv, &warm, THRESHOLD_FACTOR)?;

    let mut staged = Staged::new();
    stage_config(&mut staged, &cfg)?;
    let rows = conv.records.iter().zip(&warm.records).map(|(a, b)| {
        vec![a.iteration.to_string(), a.segment.to_string(), fmt_f64(a.frequency), fmt_f64(a.mse), fmt_f64(b.mse)]
    });
    staged.add_csv("mse.csv", &["iteration", "segment", "frequency", "mse_ilc", "mse_ilc_with_nn"], rows)?;
    staged.add_json(
        "comparison.json",
        &ExperimentSummary {
            model_supplied: nn.is_some(),
            comparison: &comparison,
            conventional: ModeRun::of(&conv),
            nn: ModeRun::of(&warm),
            config: &cfg,
        },
    )?;
    staged.commit(&output_dir(common, &cfg))
}

#[derive(Serialize)]
struct StabilitySummary<'a> {
    ok: bool,
    monotonic_ok: bool,
    monotonic_bound: f64,
    monotonic_worst: f64,
    /// `None` when the condition holds trivially (Q vanishes on the unit circle).
    trial_ok: Option<bool>,
    trial_pointwise_ok: Option<bool>,
    sup_one_minus_lg: Option<f64>,
    sup_inv_q: Option<f64>,
    q_dc_gain: f64,
    description: String,
    warnings: Vec<String>,
    config: &'a ExperimentConfig,
}

/// Writes the report in every case; a failing design additionally returns
/// a [`StabilityRefusal`].
pub fn check_stability(common: &Common) -> Result<Vec<PathBuf>> {
    let cfg = load_config(&common.config)?;
    let setup = cfg.build_setup().map_err(|e| ConfigError(e.to_string()))?;
    let report = setup.stability_report()?;
    let q_dc_gain = build_q_filter(&cfg.qfilter, setup.spec.fs())?.dc_gain();
    let mut warnings = Vec::new();
    if (q_dc_gain - 1.0).abs() > 1e-9 {
        warnings.push(format!(
            "Q filter DC gain is {q_dc_gain:.6}, not 1: low-frequency effort is amplified every iteration"
        ));
    }
    let mono = report.monotonic.monotonic.as_ref().expect("monotonic report present");
    let trial = report.trial.as_ref().and_then(|t| t.trial.as_ref());
    let description = report.describe();

    let mut staged = Staged::new();
    stage_config(&mut staged, &cfg)?;
    let fs = setup.spec.fs();
    let rows = report.monotonic.omegas.iter().enumerate().map(|(i, &w)| {
        vec![
            fmt_f64(w),
            fmt_f64(w * fs / (2.0 * std::f64::consts::PI)),
            fmt_f64(mono.margin_curve[i]),
            fmt_f64(mono.bound),
            trial.map(|t| fmt_f64(t.contraction_curve[i])).unwrap_or_default(),
        ]
    });
    staged.add_csv(
        "margins.csv",
        &["omega", "frequency_hz", "monotonic_margin", "monotonic_bound", "trial_contraction"],
        rows,
    )?;
    staged.add_json(
        "stability.json",
        &StabilitySummary {
            ok: report.ok(),
            monotonic_ok: report.monotonic_ok(),
            monotonic_bound: mono.bound,
            monotonic_worst: mono.margin_curve.iter().copied().fold(0.0, f64::max),
            trial_ok: trial.map(|t| t.ok),
            trial_pointwise_ok: trial.map(|t| t.pointwise_ok),
            sup_one_minus_lg: trial.map(|t| t.sup_one_minus_lg),
            sup_inv_q: trial.map(|t| t.sup_inv_q),
            q_dc_gain,
            description: description.clone(),
            warnings: warnings.clone(),
            config: &cfg,
        },
    )?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let written = staged.commit(&output_dir(common, &cfg))?;
    if !report.ok() {
        return Err(StabilityRefusal(description).into());
    }
    Ok(written)
}
