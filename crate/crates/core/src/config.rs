//! Experiment configuration: every tunable of every module, with defaults.
//!
//! The structures are plain serde types; the command-line front end reads
//! and writes them as TOML. Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{KalmanConfig, KalmanTuning};
use crate::feedback::PiController;
use crate::filters::{QFilter, QFilterSpec};
use crate::ilc::{IlcConfig, IlcSettings};
use crate::neural::{Activation, MlpModel, TrainSpec};
use crate::plant::{LuGreParams, PlantParams};
use crate::scenario::{frequency_grid, LoopSetup, PlantKind, RunMode, Segment, TaskSchedule};
use crate::signals::{ReferenceCommand, SampleSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// s
    pub dt: f64,
    pub n: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { dt: 0.001, n: 6000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub plant_kind: PlantKind,
    pub reference_feedthrough: bool,
    /// Scales the nominal model used for inversion relative to the
    /// simulated plant (1 = exact model).
    pub model_gain_scale: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { plant_kind: PlantKind::Lugre, reference_feedthrough: true, model_gain_scale: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    /// m^2
    pub noise_variance: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { noise_variance: 1e-9 }
    }
}

/// Shape shared by every task; each segment supplies its frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    /// m
    pub amplitude: f64,
    /// rad
    pub phase: f64,
    /// m
    pub offset: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { amplitude: 0.05, phase: -std::f64::consts::FRAC_PI_2, offset: 0.05 }
    }
}

impl ReferenceConfig {
    pub fn command(&self, frequency: f64) -> Result<ReferenceCommand> {
        ReferenceCommand::new(self.amplitude, frequency, self.phase, self.offset)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    /// Hz
    pub frequency: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub mode: RunMode,
    pub segments: Vec<SegmentConfig>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Ilc,
            segments: [0.6, 0.7, 0.8].iter().map(|&frequency| SegmentConfig { frequency, iterations: 10 }).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnConfig {
    pub hidden_layers: Vec<usize>,
    pub hidden_activation: Activation,
    pub init_seed: u64,
}

impl Default for NnConfig {
    fn default() -> Self {
        Self { hidden_layers: vec![8, 16, 8], hidden_activation: Activation::Relu, init_seed: 0 }
    }
}

impl NnConfig {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![2];
        sizes.extend(&self.hidden_layers);
        sizes.push(1);
        sizes
    }

    pub fn init_model(&self) -> Result<MlpModel> {
        MlpModel::new(&self.layer_sizes(), self.hidden_activation, self.init_seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub frequency_min: f64,
    pub frequency_max: f64,
    pub frequency_count: usize,
    /// Leave the schedule's evaluation frequencies out of the corpus.
    pub holdout_schedule_frequencies: bool,
    pub iterations_per_frequency: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            frequency_min: 0.5,
            frequency_max: 0.9,
            frequency_count: 30,
            holdout_schedule_frequencies: false,
            iterations_per_frequency: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    pub n_grid: usize,
    /// Run experiments even when the stability pre-check fails.
    pub allow_unstable: bool,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self { n_grid: 512, allow_unstable: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: String,
    pub sampling: SamplingConfig,
    pub simulation: SimulationConfig,
    pub plant: PlantParams,
    pub lugre: LuGreParams,
    pub sensor: SensorConfig,
    pub pi: PiController,
    pub kalman: KalmanTuning,
    pub ilc: IlcSettings,
    pub qfilter: QFilterSpec,
    pub reference: ReferenceConfig,
    pub schedule: ScheduleConfig,
    pub nn: NnConfig,
    pub training: TrainSpec,
    pub corpus: CorpusConfig,
    pub checks: ChecksConfig,
}

impl ExperimentConfig {
    pub fn with_output_dir(mut self, dir: impl Into<String>) -> Self {
        self.output_dir = dir.into();
        self
    }

    pub fn sample_spec(&self) -> Result<SampleSpec> {
        SampleSpec::new(self.sampling.dt, self.sampling.n)
    }

    pub fn validate(&self) -> Result<()> {
        self.sample_spec()?;
        self.plant.validate()?;
        self.lugre.validate()?;
        self.pi.validate()?;
        self.kalman.validate()?;
        self.training.validate()?;
        if !(self.sensor.noise_variance >= 0.0 && self.sensor.noise_variance.is_finite()) {
            return Err(Error::InvalidParameter("sensor.noise_variance must be >= 0".into()));
        }
        if !(self.simulation.model_gain_scale > 0.0 && self.simulation.model_gain_scale.is_finite()) {
            return Err(Error::InvalidParameter("simulation.model_gain_scale must be positive".into()));
        }
        if self.corpus.iterations_per_frequency == 0 || self.corpus.frequency_count == 0 {
            return Err(Error::InvalidParameter("corpus needs frequency_count and iterations_per_frequency >= 1".into()));
        }
        if self.nn.hidden_layers.contains(&0) {
            return Err(Error::InvalidParameter("nn.hidden_layers entries must be >= 1".into()));
        }
        self.schedule()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<TaskSchedule> {
        let segments = self
            .schedule
            .segments
            .iter()
            .map(|s| Ok(Segment { reference: self.reference.command(s.frequency)?, iterations: s.iterations }))
            .collect::<Result<Vec<_>>>()?;
        TaskSchedule::new(segments)
    }

    pub fn corpus_frequencies(&self) -> Vec<f64> {
        let grid = frequency_grid(self.corpus.frequency_min, self.corpus.frequency_max, self.corpus.frequency_count);
        if !self.corpus.holdout_schedule_frequencies {
            return grid;
        }
        grid.into_iter()
            .filter(|f| !self.schedule.segments.iter().any(|s| (s.frequency - f).abs() < 1e-9))
            .collect()
    }

    pub fn build_setup(&self) -> Result<LoopSetup> {
        self.validate()?;
        let spec = self.sample_spec()?;
        let model = self.plant.discretize(spec.dt())?;
        let g_hat = model.to_transfer_function()?.scaled(self.simulation.model_gain_scale)?;
        let q = QFilter::new(&self.qfilter, spec.fs())?;
        let ilc = IlcConfig::new(self.ilc.beta, q, g_hat)?;
        let kalman = KalmanConfig::new(model, &self.kalman)?;
        Ok(LoopSetup {
            spec,
            plant: self.plant,
            kind: self.simulation.plant_kind,
            lugre: self.lugre,
            noise_variance: self.sensor.noise_variance,
            pi: self.pi,
            kalman,
            ilc,
            error_source: self.ilc.error_source,
            reference_feedthrough: self.simulation.reference_feedthrough,
            master_seed: self.master_seed,
            n_grid: self.checks.n_grid,
        })
    }
}
