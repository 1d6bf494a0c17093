use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mlp_gradients, MlpModel, Normalizer, TrainingSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && [self.lr, self.epsilon].iter().all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub settings: AdamSettings,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(settings: AdamSettings, n_params: usize) -> Self {
        Self { settings, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(opt: &mut AdamState, model: &mut MlpModel, grads: &[f64]) -> Result<()> {
    let params = model.params_mut();
    if grads.len() != params.len() || opt.m.len() != params.len() {
        return Err(Error::LengthMismatch { expected: params.len(), actual: grads.len() });
    }
    let s = opt.settings;
    opt.t += 1;
    let c1 = 1.0 - s.beta1.powi(opt.t as i32);
    let c2 = 1.0 - s.beta2.powi(opt.t as i32);
    for i in 0..params.len() {
        opt.m[i] = s.beta1 * opt.m[i] + (1.0 - s.beta1) * grads[i];
        opt.v[i] = s.beta2 * opt.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
        let m_hat = opt.m[i] / c1;
        let v_hat = opt.v[i] / c2;
        params[i] -= s.lr * m_hat / (v_hat.sqrt() + s.epsilon);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub adam: AdamSettings,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 128, shuffle_seed: 0, adam: AdamSettings::default() }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch_size must be >= 1".into()));
        }
        self.adam.validate()
    }
}

pub fn evaluate_mse(model: &MlpModel, data: &TrainingSet) -> f64 {
    let sum: f64 = data.features.iter().zip(&data.targets).map(|(x, t)| (model.forward(*x) - t).powi(2)).sum();
    sum / data.len() as f64
}

/// Fits the normalizer on `data`, then trains with mini-batch Adam. Returns
/// the trained model and the per-epoch mean training loss (averaged over the
/// mini-batches of that epoch, weighted by batch size).
pub fn fit(model: &MlpModel, data: &TrainingSet, spec: &TrainSpec) -> Result<(MlpModel, Vec<f64>)> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    let mut model = model.clone();
    model.normalizer = Normalizer::fit(&data.features)?;
    let mut opt = AdamState::new(spec.adam, model.params().len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.shuffle_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(spec.epochs);
    for _ in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            let batch = data.subset(chunk);
            let (loss, grads) = mlp_gradients(&model, &batch)?;
            epoch_loss += loss * chunk.len() as f64;
            adam_step(&mut opt, &mut model, &grads)?;
        }
        let epoch_loss = epoch_loss / data.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Numerical("training loss became non-finite".into()));
        }
        curve.push(epoch_loss);
    }
    Ok((model, curve))
}
