//! Multilayer perceptron estimating the nonlinear ILC effort from the
//! reference position and velocity.
//!
//! Parameters are stored in one flat vector, layer by layer, each layer as a
//! row-major `out x in` weight matrix followed by its `out` biases. Gradients
//! and optimizer moments share that layout.

mod io;
mod train;

pub use io::{model_from_text, model_to_text, MODEL_FORMAT_HEADER};
pub use train::{adam_step, evaluate_mse, fit, AdamSettings, AdamState, TrainSpec};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{generate_reference, ReferenceCommand, SampleSpec, Signal};

pub const DEFAULT_LAYER_SIZES: [usize; 5] = [2, 8, 16, 8, 1];
pub const FEATURE_NAMES: [&str; 2] = ["reference position", "reference velocity"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    /// Derivative, taking 0 at the ReLU kink.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Per-feature z-score normalizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { mean: [0.0; 2], std: [1.0; 2] }
    }
}

impl Normalizer {
    pub fn fit(features: &[[f64; 2]]) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidParameter("cannot fit a normalizer on zero rows".into()));
        }
        let n = features.len() as f64;
        let mut mean = [0.0; 2];
        let mut std = [0.0; 2];
        for i in 0..2 {
            mean[i] = features.iter().map(|f| f[i]).sum::<f64>() / n;
            let var = features.iter().map(|f| (f[i] - mean[i]).powi(2)).sum::<f64>() / n;
            std[i] = var.sqrt();
            if !(std[i] > 0.0 && std[i] > 1e-12 * mean[i].abs() && std[i].is_finite()) {
                return Err(Error::DegenerateFeature { feature: FEATURE_NAMES[i].into() });
            }
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        [(x[0] - self.mean[0]) / self.std[0], (x[1] - self.mean[1]) / self.std[1]]
    }
}

/// Feature/target rows: `(position, velocity) -> u_n`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    pub features: Vec<[f64; 2]>,
    pub targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new(features: Vec<[f64; 2]>, targets: Vec<f64>) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::LengthMismatch { expected: features.len(), actual: targets.len() });
        }
        if let Some(i) = features
            .iter()
            .zip(&targets)
            .position(|(f, t)| !(f[0].is_finite() && f[1].is_finite() && t.is_finite()))
        {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Self { features, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn extend(&mut self, other: &TrainingSet) {
        self.features.extend_from_slice(&other.features);
        self.targets.extend_from_slice(&other.targets);
    }

    pub fn subset(&self, idx: &[usize]) -> TrainingSet {
        TrainingSet {
            features: idx.iter().map(|&i| self.features[i]).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    pub fn target_variance(&self) -> f64 {
        let n = self.len() as f64;
        let mean = self.targets.iter().sum::<f64>() / n;
        self.targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    pub normalizer: Normalizer,
}

impl MlpModel {
    /// He-uniform initialized network with the given hidden activation on
    /// every hidden layer and a linear output.
    pub fn new(layer_sizes: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..model.n_layers() {
            let fan_in = model.layer_sizes[l];
            let limit = (6.0 / fan_in as f64).sqrt();
            let (w, _) = model.layer_offsets(l);
            let count = fan_in * model.layer_sizes[l + 1];
            for p in &mut model.params[w..w + count] {
                *p = rng.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    pub fn zeros(layer_sizes: &[usize], hidden: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes[0] != 2 || *layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidParameter(format!(
                "layer sizes must start with 2 inputs and end with 1 output, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidParameter("layer sizes must be positive".into()));
        }
        let n_layers = layer_sizes.len() - 1;
        let mut activations = vec![hidden; n_layers];
        activations[n_layers - 1] = Activation::Linear;
        Self::from_parts(layer_sizes.to_vec(), activations, vec![0.0; param_count(layer_sizes)], Normalizer::default())
    }

    pub fn from_parts(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        params: Vec<f64>,
        normalizer: Normalizer,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || activations.len() != layer_sizes.len() - 1 {
            return Err(Error::InvalidParameter("activation count must equal layer count".into()));
        }
        if params.len() != param_count(&layer_sizes) {
            return Err(Error::LengthMismatch { expected: param_count(&layer_sizes), actual: params.len() });
        }
        if !normalizer.std.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter("normalizer standard deviations must be positive".into()));
        }
        Ok(Self { layer_sizes, activations, params, normalizer })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Offsets of the weight block and bias block of layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = (0..l).map(|i| (self.layer_sizes[i] + 1) * self.layer_sizes[i + 1]).sum();
        (start, start + self.layer_sizes[l] * self.layer_sizes[l + 1])
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (w, b) = self.layer_offsets(l);
        let out = self.layer_sizes[l + 1];
        (&self.params[w..b], &self.params[b..b + out])
    }

    /// Forward pass keeping pre-activations and activations of every layer.
    fn forward_trace(&self, x: [f64; 2]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let z = self.normalizer.apply(x);
        let mut acts = vec![z.to_vec()];
        let mut pres = Vec::with_capacity(self.n_layers());
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let input = acts.last().unwrap();
            let n_in = self.layer_sizes[l];
            let pre: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, bias)| bias + w[o * n_in..(o + 1) * n_in].iter().zip(input).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            let act = pre.iter().map(|&p| self.activations[l].apply(p)).collect();
            pres.push(pre);
            acts.push(act);
        }
        (pres, acts)
    }

    pub fn forward(&self, x: [f64; 2]) -> f64 {
        let (_, acts) = self.forward_trace(x);
        acts.last().unwrap()[0]
    }

    /// Signs of all hidden pre-activations, used to detect ReLU kinks.
    pub fn activation_pattern(&self, x: [f64; 2]) -> Vec<bool> {
        let (pres, _) = self.forward_trace(x);
        pres.iter().flatten().map(|p| *p > 0.0).collect()
    }

    /// Bound on `|output|` for normalized inputs with every component in
    /// `[-n_std, n_std]`, from layer operator norms. ReLU is non-expansive,
    /// so `|h_{l+1}| <= ||W_l|| |h_l| + |b_l|`.
    pub fn output_bound(&self, n_std: f64) -> f64 {
        let mut bound = n_std * (self.layer_sizes[0] as f64).sqrt();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let m = DMatrix::from_row_slice(self.layer_sizes[l + 1], self.layer_sizes[l], w);
            let op = m.singular_values().iter().copied().fold(0.0, f64::max);
            let bias = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            bound = op * bound + bias;
        }
        bound
    }
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

pub fn mlp_forward(model: &MlpModel, x: [f64; 2]) -> f64 {
    model.forward(x)
}

/// Mean-squared-error loss over `batch` and its exact gradient.
pub fn mlp_gradients(model: &MlpModel, batch: &TrainingSet) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("gradient batch is empty".into()));
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    for (x, &t) in batch.features.iter().zip(&batch.targets) {
        let (pres, acts) = model.forward_trace(*x);
        let y = acts.last().unwrap()[0];
        loss += (y - t) * (y - t);
        // dL/d(output activation)
        let mut delta = vec![2.0 * (y - t) / n];
        for l in (0..model.n_layers()).rev() {
            let act_fn = model.activations[l];
            let d_pre: Vec<f64> = delta.iter().zip(&pres[l]).map(|(d, p)| d * act_fn.derivative(*p)).collect();
            let (w_off, b_off) = model.layer_offsets(l);
            let n_in = model.layer_sizes[l];
            let input = &acts[l];
            for (o, dp) in d_pre.iter().enumerate() {
                if *dp == 0.0 {
                    continue;
                }
                grad[b_off + o] += dp;
                for (i, a) in input.iter().enumerate() {
                    grad[w_off + o * n_in + i] += dp * a;
                }
            }
            if l > 0 {
                let (w, _) = model.layer(l);
                delta = (0..n_in).map(|i| d_pre.iter().enumerate().map(|(o, dp)| dp * w[o * n_in + i]).sum()).collect();
            }
        }
    }
    Ok((loss / n, grad))
}

/// Network prediction of the nonlinear effort along a reference.
pub fn predict_effort_series(model: &MlpModel, cmd: &ReferenceCommand, spec: SampleSpec) -> Result<Signal> {
    let (r, v) = generate_reference(cmd, spec);
    Signal::new(spec, r.samples().iter().zip(v.samples()).map(|(&p, &d)| model.forward([p, d])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::seq::SliceRandom;

    fn random_batch(seed: u64, n: usize) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..n).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let targets = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        TrainingSet::new(features, targets).unwrap()
    }

    /// Independent forward pass built on nalgebra matrices.
    fn oracle_forward(model: &MlpModel, x: [f64; 2]) -> f64 {
        let z = model.normalizer.apply(x);
        let mut h = nalgebra::DVector::from_vec(z.to_vec());
        for l in 0..model.n_layers() {
            let (w_off, b_off) = model.layer_offsets(l);
            let (n_in, n_out) = (model.layer_sizes()[l], model.layer_sizes()[l + 1]);
            let w = DMatrix::from_row_slice(n_out, n_in, &model.params()[w_off..b_off]);
            let b = nalgebra::DVector::from_column_slice(&model.params()[b_off..b_off + n_out]);
            h = w * h + b;
            if model.activations()[l] == Activation::Relu {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        h[0]
    }

    #[test]
    fn default_architecture() {
        let m = MlpModel::new(&DEFAULT_LAYER_SIZES, Activation::Relu, 0).unwrap();
        assert_eq!(m.params().len(), 3 * 8 + 9 * 16 + 17 * 8 + 9);
        assert_eq!(m.activations(), &[Activation::Relu, Activation::Relu, Activation::Relu, Activation::Linear]);
        // biases start at zero, weights within the He-uniform limit
        for l in 0..m.n_layers() {
            let (w, b) = m.layer(l);
            let limit = (6.0 / m.layer_sizes()[l] as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= limit));
            assert!(b.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn zero_and_bias_only_models() {
        let mut m = MlpModel::zeros(&DEFAULT_LAYER_SIZES, Activation::Relu).unwrap();
        assert_eq!(m.forward([0.3, -7.0]), 0.0);
        let last = m.params().len() - 1;
        m.params_mut()[last] = 0.42;
        for x in [[0.0, 0.0], [1.0, -3.0], [1e3, 1e-3]] {
            assert_eq!(m.forward(x), 0.42);
        }
    }

    #[test]
    fn forward_matches_independent_implementation() {
        for seed in 0..5 {
            let mut m = MlpModel::new(&DEFAULT_LAYER_SIZES, Activation::Relu, seed).unwrap();
            m.normalizer = Normalizer { mean: [0.05, 0.01], std: [0.03, 0.2] };
            let batch = random_batch(seed + 100, 50);
            for x in &batch.features {
                assert_abs_diff_eq!(m.forward(*x), oracle_forward(&m, *x), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let m = MlpModel::new(&DEFAULT_LAYER_SIZES, Activation::Relu, 3).unwrap();
        let mut batch = random_batch(4, 20);
        batch.targets = batch.features.iter().map(|x| m.forward(*x)).collect();
        let (loss, grad) = mlp_gradients(&m, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let m = MlpModel::new(&DEFAULT_LAYER_SIZES, Activation::Relu, seed).unwrap();
            let batch = random_batch(seed + 10, 16);
            let (_, grad) = mlp_gradients(&m, &batch).unwrap();
            let h = 1e-6;
            for p in 0..m.params().len() {
                let (mut plus, mut minus) = (m.clone(), m.clone());
                plus.params_mut()[p] += h;
                minus.params_mut()[p] -= h;
                let kink = batch.features.iter().any(|x| plus.activation_pattern(*x) != minus.activation_pattern(*x));
                if kink {
                    continue;
                }
                let fd = (mlp_gradients(&plus, &batch).unwrap().0 - mlp_gradients(&minus, &batch).unwrap().0) / (2.0 * h);
                let rel = (fd - grad[p]).abs() / fd.abs().max(grad[p].abs()).max(1e-7);
                assert!(rel < 1e-4, "seed {seed} param {p}: fd {fd} vs bp {}", grad[p]);
            }
        }
    }

    #[test]
    fn single_sample_linear_path_closed_form() {
        // 2 -> 1 -> 1 network with a positive hidden pre-activation:
        // y = w2 relu(w1 . z + b1) + b2, L = (y - t)^2.
        let params = vec![0.5, -0.25, 0.1, 2.0, 0.3];
        let m = MlpModel::from_parts(vec![2, 1, 1], vec![Activation::Relu, Activation::Linear], params, Normalizer::default())
            .unwrap();
        let (x, t) = ([1.0, 0.4], 0.2);
        let h = 0.5 * 1.0 - 0.25 * 0.4 + 0.1;
        let y = 2.0 * h + 0.3;
        let d = 2.0 * (y - t);
        let batch = TrainingSet::new(vec![x], vec![t]).unwrap();
        let (loss, g) = mlp_gradients(&m, &batch).unwrap();
        assert_abs_diff_eq!(loss, (y - t) * (y - t), epsilon = 1e-15);
        let expected = [d * 2.0 * x[0], d * 2.0 * x[1], d * 2.0, d * h, d];
        for (a, b) in g.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn full_batch_gradient_is_permutation_invariant() {
        let m = MlpModel::new(&DEFAULT_LAYER_SIZES, Activation::Relu, 8).unwrap();
        let batch = random_batch(9, 256);
        let (_, g) = mlp_gradients(&m, &batch).unwrap();
        let mut idx: Vec<usize> = (0..batch.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        let (_, g2) = mlp_gradients(&m, &batch.subset(&idx)).unwrap();
        for (a, b) in g.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_bound_holds_in_three_sigma_box() {
        for seed in 0..5 {
            let mut m = MlpModel::new(&DEFAULT_LAYER_SIZES, Activation::Relu, seed).unwrap();
            for (i, p) in m.params_mut().iter_mut().enumerate() {
                *p += 0.01 * (i as f64).sin();
            }
            m.normalizer = Normalizer { mean: [0.05, 0.0], std: [0.035, 0.2] };
            let bound = m.output_bound(3.0);
            assert!(bound.is_finite() && bound > 0.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..2000 {
                let z = [rng.random_range(-3.0..=3.0), rng.random_range(-3.0..=3.0)];
                let x = [m.normalizer.mean[0] + z[0] * m.normalizer.std[0], m.normalizer.mean[1] + z[1] * m.normalizer.std[1]];
                assert!(m.forward(x).abs() <= bound);
            }
        }
    }

    #[test]
    fn normalizer_rejects_constant_feature() {
        let f = vec![[1.0, 0.5], [2.0, 0.5], [3.0, 0.5]];
        match Normalizer::fit(&f) {
            Err(Error::DegenerateFeature { feature }) => assert_eq!(feature, "reference velocity"),
            other => panic!("{other:?}"),
        }
        let n = Normalizer::fit(&[[1.0, 0.0], [3.0, 2.0]]).unwrap();
        assert_eq!(n.mean, [2.0, 1.0]);
        assert_eq!(n.std, [1.0, 1.0]);
    }

    #[test]
    fn zero_model_predicts_zero_series() {
        let m = MlpModel::zeros(&DEFAULT_LAYER_SIZES, Activation::Relu).unwrap();
        let cmd = ReferenceCommand::rest_start(0.05, 0.7).unwrap();
        let s = predict_effort_series(&m, &cmd, SampleSpec::default()).unwrap();
        assert_eq!(s.len(), 6000);
        assert_eq!(s.max_abs(), 0.0);
    }

    #[test]
    fn training_set_validation() {
        assert!(TrainingSet::new(vec![[0.0, 0.0]], vec![]).is_err());
        assert!(matches!(TrainingSet::new(vec![[0.0, f64::NAN]], vec![1.0]), Err(Error::NonFinite { index: 0 })));
    }
}
