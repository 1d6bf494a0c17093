//! Loading, resolving and documenting the TOML experiment configuration.

use std::path::Path;

use anyhow::{Context, Result};
use nnilc::config::ExperimentConfig;

use crate::ConfigError;

/// One line of documentation per configuration key, keyed by `section.key`
/// (top-level keys have no section). Used to annotate `print-defaults`.
pub const FIELD_DOCS: &[(&str, &str)] = &[
    ("master_seed", "Master seed; per-trial noise seeds derive from it and the global iteration index."),
    ("output_dir", "Output directory (empty: use --out or ./nnilc-out)."),
    ("sampling.dt", "Control period, s."),
    ("sampling.n", "Samples per trial (6000 at 1 ms = 6 s)."),
    ("simulation.plant_kind", "lugre | frictionless | linear (exact discrete nominal model)."),
    ("simulation.reference_feedthrough", "Add the reference itself to the plant input; learned effort is the correction on top."),
    ("simulation.model_gain_scale", "Gain of the nominal model used for inversion relative to the simulated plant (1 = exact)."),
    ("plant.mass", "Moving mass M, kg."),
    ("plant.damping", "Viscous damping D, N s/m."),
    ("plant.stiffness", "Spring stiffness Ks, N/m."),
    ("plant.force_constant", "Lorentz force constant, N/A."),
    ("plant.amplifier_gain", "Current amplifier gain, A/V."),
    ("plant.u_max", "Command saturation, V."),
    ("plant.substeps", "Integration substeps per control period."),
    ("lugre.sigma0", "Bristle stiffness, N/m."),
    ("lugre.sigma1", "Bristle damping, N s/m (default: critical damping with the default mass)."),
    ("lugre.sigma2", "Viscous friction coefficient, N s/m."),
    ("lugre.fc", "Coulomb friction level, N."),
    ("lugre.fs", "Stiction level, N."),
    ("lugre.vs", "Stribeck velocity, m/s."),
    ("sensor.noise_variance", "Position measurement noise variance, m^2."),
    ("pi.kp", "Proportional gain, V/m."),
    ("pi.ki", "Integral gain per sample, V/m."),
    ("pi.windup_limit", "Clamp on the integral contribution, V."),
    ("kalman.q_position", "Process noise variance on position."),
    ("kalman.q_velocity", "Process noise variance on velocity."),
    ("kalman.r", "Measurement noise variance."),
    ("kalman.x0_position", "Initial position estimate, m."),
    ("kalman.x0_velocity", "Initial velocity estimate, m/s."),
    ("kalman.p0_position", "Initial position error variance."),
    ("kalman.p0_velocity", "Initial velocity error variance."),
    ("ilc.beta", "Learning gain; the convergence checks decide admissibility."),
    ("ilc.error_source", "kalman_estimate | raw_measurement: which error drives learning."),
    ("qfilter.kind", "fixed (fourth-order low-pass with fixed coefficients) | butterworth."),
    ("qfilter.order", "Butterworth order (ignored for fixed)."),
    ("qfilter.cutoff_hz", "Butterworth cutoff, Hz (ignored for fixed)."),
    ("qfilter.application", "zero_phase (forward-backward, |Q|^2) | causal."),
    ("qfilter.dc_normalize", "Scale the fixed filter to unit DC gain (its raw coefficients give 1.15)."),
    ("reference.amplitude", "Sinusoid amplitude, m."),
    ("reference.phase", "Phase, rad (-pi/2 with offset = amplitude starts at rest)."),
    ("reference.offset", "Position offset, m."),
    ("schedule.mode", "Mode for `simulate`: feedback_only | ilc | ilc_with_nn."),
    ("schedule.segments.frequency", "Segment reference frequency, Hz."),
    ("schedule.segments.iterations", "Iterations on this segment (>= 1)."),
    ("nn.hidden_layers", "Hidden layer widths; input is (r, r_dot), output is u_n."),
    ("nn.hidden_activation", "relu | linear."),
    ("nn.init_seed", "Seed of the He-uniform weight initialization."),
    ("training.epochs", "Training epochs."),
    ("training.batch_size", "Mini-batch size."),
    ("training.shuffle_seed", "Seed of the per-epoch shuffle."),
    ("training.adam.lr", "Adam learning rate."),
    ("training.adam.beta1", "Adam first-moment decay."),
    ("training.adam.beta2", "Adam second-moment decay."),
    ("training.adam.epsilon", "Adam denominator offset."),
    ("corpus.frequency_min", "Lowest corpus frequency, Hz."),
    ("corpus.frequency_max", "Highest corpus frequency, Hz."),
    ("corpus.frequency_count", "Number of uniformly spaced corpus frequencies."),
    ("corpus.holdout_schedule_frequencies", "Exclude the schedule's frequencies from the corpus."),
    ("corpus.iterations_per_frequency", "Conventional ILC iterations per corpus frequency."),
    ("checks.n_grid", "Frequency grid size of the convergence checks."),
    ("checks.allow_unstable", "Run ILC even when a convergence check fails."),
];

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
    cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).with_context(|| format!("in config {}", path.display()))
}

/// The configuration with every default materialized.
pub fn resolved_toml(cfg: &ExperimentConfig) -> Result<String> {
    Ok(toml::to_string(cfg)?)
}

fn doc_for(key: &str) -> Option<&'static str> {
    FIELD_DOCS.iter().find(|(k, _)| *k == key).map(|(_, d)| *d)
}

/// Default configuration with a comment above every key.
pub fn documented_defaults() -> Result<String> {
    let raw = resolved_toml(&ExperimentConfig::default())?;
    let mut out = String::from("# nnilc experiment configuration (all defaults).\n\n");
    let mut section = String::new();
    for line in raw.lines() {
        let trimmed = line.trim();
        if let Some(name) = trimmed.strip_prefix("[[").and_then(|s| s.strip_suffix("]]")) {
            section = name.to_string();
        } else if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.to_string();
        } else if let Some((key, _)) = trimmed.split_once(" = ") {
            let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            let doc = doc_for(&full).ok_or_else(|| anyhow::anyhow!("undocumented config key `{full}`"))?;
            out.push_str(&format!("# {doc}\n"));
        }
        out.push_str(line);
        out.push('\n');
    }
    Ok(out)
}
