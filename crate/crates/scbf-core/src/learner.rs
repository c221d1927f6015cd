//! Small fully connected network that regresses the diffusion correction
//! Δ(x) from a generator dataset, plus its training loop and persistence.
//!
//! The architecture is two tanh hidden layers (100 and 30 units) with a
//! linear scalar output. Inputs are normalized per dimension with statistics
//! fitted on the training set. Training is full-batch Adam on the mean
//! squared error; everything is seeded and single-threaded, so a fixed
//! configuration reproduces the same parameters bit-for-bit.

use crate::barrier::{lie_parts, BarrierSpec};
use crate::error::{Error, Result};
use crate::estimator::GeneratorDataset;
use crate::format;
use crate::mat::{dot, Mat};
use crate::rng::{streams, RngStream};
use crate::sde::SdeModel;

/// Hidden layer widths used by the built-in experiments.
pub const DEFAULT_HIDDEN: [usize; 2] = [100, 30];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
}

/// Per-dimension affine input normalization fitted on the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNormalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNormalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn fit(inputs: &[Vec<f64>]) -> Self {
        assert!(!inputs.is_empty());
        let dim = inputs[0].len();
        let n = inputs.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in inputs {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for x in inputs {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Weights, biases and input normalization of the Δ(x) regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    /// One `out × in` matrix per layer.
    weights: Vec<Mat>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
    normalizer: InputNormalizer,
}

impl MlpParams {
    /// Zero-initialized parameters (useful for the plain Lie-derivative
    /// baseline and in tests: the forward pass is identically zero).
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        assert!(layer_sizes.len() >= 2);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            weights.push(Mat::zeros(w[1], w[0]));
            biases.push(vec![0.0; w[1]]);
        }
        Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation: Activation::Tanh,
            normalizer: InputNormalizer::identity(layer_sizes[0]),
        }
    }

    /// Symmetric uniform initialization scaled by fan-in, drawn from the
    /// weight-init stream of `seed`.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Self {
        let mut params = Self::zeros(layer_sizes);
        let mut rng = RngStream::new(seed, streams::WEIGHT_INIT);
        for (w, b) in params.weights.iter_mut().zip(&mut params.biases) {
            let bound = 1.0 / (w.cols() as f64).sqrt();
            for i in 0..w.rows() {
                for j in 0..w.cols() {
                    w.set(i, j, rng.uniform_in(-bound, bound));
                }
            }
            for v in b.iter_mut() {
                *v = rng.uniform_in(-bound, bound);
            }
        }
        params
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn normalizer(&self) -> &InputNormalizer {
        &self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: InputNormalizer) {
        assert_eq!(normalizer.mean.len(), self.input_dim());
        self.normalizer = normalizer;
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
            && self
                .biases
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Mutable access to the weight matrices, for external perturbation
    /// checks (finite-difference validation of the gradients).
    pub fn weights_mut(&mut self) -> &mut [Mat] {
        &mut self.weights
    }

    /// Mutable access to the bias vectors; see [`Self::weights_mut`].
    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    fn num_layers(&self) -> usize {
        self.weights.len()
    }
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params
                .weights
                .iter()
                .map(|w| Mat::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// Deterministic scalar forward pass; normalization is applied before the
/// first layer.
pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> f64 {
    assert_eq!(x.len(), params.input_dim(), "input dimension mismatch");
    let mut a = params.normalizer.apply(x);
    let last = params.num_layers() - 1;
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let mut z = w.mul_vec(&a);
        for (zi, bi) in z.iter_mut().zip(b) {
            *zi += bi;
        }
        if l < last {
            for zi in z.iter_mut() {
                *zi = zi.tanh();
            }
        }
        a = z;
    }
    debug_assert_eq!(a.len(), 1);
    a[0]
}

/// Mean squared error over `batch` and its exact gradient by
/// backpropagation.
pub fn loss_and_grad(params: &MlpParams, batch: &[(Vec<f64>, f64)]) -> (f64, Gradients) {
    assert!(!batch.is_empty(), "batch must be nonempty");
    let layers = params.num_layers();
    let last = layers - 1;
    let mut grads = Gradients::zeros_like(params);
    let mut mse = 0.0;
    let inv_b = 1.0 / batch.len() as f64;

    // Reused per-sample activations: activations[0] is the normalized input.
    for (x, target) in batch {
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
        activations.push(params.normalizer.apply(x));
        for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
            let mut z = w.mul_vec(&activations[l]);
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
            if l < last {
                for zi in z.iter_mut() {
                    *zi = zi.tanh();
                }
            }
            activations.push(z);
        }
        let out = activations[layers][0];
        let residual = out - target;
        mse += residual * residual * inv_b;

        // Backward sweep; delta holds dL/dz for the current layer.
        let mut delta = vec![2.0 * residual * inv_b];
        for l in (0..layers).rev() {
            let input = &activations[l];
            for (i, di) in delta.iter().enumerate() {
                grads.biases[l][i] += di;
                for (j, inj) in input.iter().enumerate() {
                    let cur = grads.weights[l].get(i, j);
                    grads.weights[l].set(i, j, cur + di * inj);
                }
            }
            if l > 0 {
                // dL/da_{l-1} = Wᵀ delta, then through tanh': a = tanh(z)
                // gives dz = (1 - a²) da.
                let upstream = params.weights[l].left_mul_vec(&delta);
                delta = upstream
                    .iter()
                    .zip(&activations[l])
                    .map(|(u, a)| u * (1.0 - a * a))
                    .collect();
            }
        }
    }
    (mse, grads)
}

/// Training configuration. The defaults are what the built-in experiments
/// use: 500 full-batch epochs of Adam at 1e-3.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: None,
            learning_rate: 5e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct AdamState {
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl AdamState {
    fn new(params: &MlpParams) -> Self {
        Self {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            t: 0,
        }
    }

    fn update(&mut self, params: &mut MlpParams, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for l in 0..params.weights.len() {
            for i in 0..params.weights[l].rows() {
                for j in 0..params.weights[l].cols() {
                    let g = grads.weights[l].get(i, j);
                    let m = ADAM_BETA1 * self.m.weights[l].get(i, j) + (1.0 - ADAM_BETA1) * g;
                    let v = ADAM_BETA2 * self.v.weights[l].get(i, j) + (1.0 - ADAM_BETA2) * g * g;
                    self.m.weights[l].set(i, j, m);
                    self.v.weights[l].set(i, j, v);
                    let step = lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
                    let cur = params.weights[l].get(i, j);
                    params.weights[l].set(i, j, cur - step);
                }
            }
            for i in 0..params.biases[l].len() {
                let g = grads.biases[l][i];
                let m = ADAM_BETA1 * self.m.biases[l][i] + (1.0 - ADAM_BETA1) * g;
                let v = ADAM_BETA2 * self.v.biases[l][i] + (1.0 - ADAM_BETA2) * g * g;
                self.m.biases[l][i] = m;
                self.v.biases[l][i] = v;
                params.biases[l][i] -= lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Train a fresh network on `dataset`. Returns the fitted parameters and the
/// full-dataset MSE recorded at the start of every epoch.
pub fn train(dataset: &GeneratorDataset, config: &TrainConfig) -> Result<(MlpParams, Vec<f64>)> {
    train_with_hidden(dataset, config, &DEFAULT_HIDDEN)
}

/// As [`train`], with explicit hidden layer widths.
pub fn train_with_hidden(
    dataset: &GeneratorDataset,
    config: &TrainConfig,
    hidden: &[usize],
) -> Result<(MlpParams, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::config("dataset", "cannot train on an empty dataset"));
    }
    if config.epochs == 0 {
        return Err(Error::config("epochs", "must be at least 1"));
    }
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(Error::config("learning_rate", "must be positive"));
    }

    let dim = dataset.state_dim();
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(dim);
    sizes.extend_from_slice(hidden);
    sizes.push(1);

    let mut params = MlpParams::init(&sizes, config.seed);
    let inputs: Vec<Vec<f64>> = dataset.samples.iter().map(|(x, _)| x.clone()).collect();
    params.set_normalizer(InputNormalizer::fit(&inputs));

    let mut adam = AdamState::new(&params);
    let mut history = Vec::with_capacity(config.epochs);
    let mut shuffle_rng = RngStream::new(config.seed, streams::WEIGHT_INIT + 1);

    for epoch in 0..config.epochs {
        match config.batch_size {
            None => {
                let (mse, grads) = loss_and_grad(&params, &dataset.samples);
                if !mse.is_finite() {
                    return Err(Error::TrainingDiverged { epoch });
                }
                history.push(mse);
                adam.update(&mut params, &grads, config.learning_rate);
            }
            Some(bs) => {
                let bs = bs.max(1);
                let (epoch_mse, _) = loss_and_grad(&params, &dataset.samples);
                if !epoch_mse.is_finite() {
                    return Err(Error::TrainingDiverged { epoch });
                }
                history.push(epoch_mse);
                let mut order: Vec<usize> = (0..dataset.len()).collect();
                // Fisher-Yates with the seeded stream.
                for i in (1..order.len()).rev() {
                    let j = (shuffle_rng.next_u64() % (i as u64 + 1)) as usize;
                    order.swap(i, j);
                }
                for chunk in order.chunks(bs) {
                    let batch: Vec<(Vec<f64>, f64)> = chunk
                        .iter()
                        .map(|&i| dataset.samples[i].clone())
                        .collect();
                    let (mse, grads) = loss_and_grad(&params, &batch);
                    if !mse.is_finite() {
                        return Err(Error::TrainingDiverged { epoch });
                    }
                    adam.update(&mut params, &grads, config.learning_rate);
                }
            }
        }
        if !params.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
    }
    Ok((params, history))
}

/// The learned generator `Â h(x, u) = L_f h + L_g h · u + N(x)`. Uses only
/// the drift and control matrix of the model; the diffusion is never
/// touched.
pub fn learned_generator(
    params: &MlpParams,
    model: &SdeModel,
    barrier: &BarrierSpec,
    x: &[f64],
    u: &[f64],
) -> f64 {
    let (lf, lg) = lie_parts(model, barrier, x);
    lf + dot(&lg, u) + mlp_forward(params, x)
}

// ---------------------------------------------------------------------------
// Persistence: versioned text, shapes first, then row-major entries at 17
// significant digits.
// ---------------------------------------------------------------------------

const MLP_MAGIC: &str = "scbf-mlp";
const MLP_VERSION: &str = "v1";

pub fn params_to_string(params: &MlpParams) -> String {
    let mut out = format!("{MLP_MAGIC} {MLP_VERSION}\n");
    out.push_str("activation tanh\n");
    out.push_str("normalizer-mean");
    for v in &params.normalizer.mean {
        out.push(' ');
        out.push_str(&format::float(*v));
    }
    out.push('\n');
    out.push_str("normalizer-scale");
    for v in &params.normalizer.scale {
        out.push(' ');
        out.push_str(&format::float(*v));
    }
    out.push('\n');
    out.push_str("layers");
    for s in &params.layer_sizes {
        out.push_str(&format!(" {s}"));
    }
    out.push('\n');
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        out.push_str(&format!("layer {l}\n"));
        for i in 0..w.rows() {
            let row: Vec<String> = (0..w.cols()).map(|j| format::float(w.get(i, j))).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out.push_str("bias ");
        let row: Vec<String> = b.iter().map(|v| format::float(*v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn params_from_str(text: &str) -> Result<MlpParams> {
    let mut lines = text.lines().enumerate().peekable();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty weight file"))?;
    let mut parts = header.split_whitespace();
    let magic = parts.next().unwrap_or("");
    if magic != MLP_MAGIC {
        return Err(Error::parse(
            1,
            format!("expected `{MLP_MAGIC}` header, found `{magic}`"),
        ));
    }
    let version = parts.next().unwrap_or("");
    if version != MLP_VERSION {
        return Err(Error::parse(
            1,
            format!("unsupported weight version: expected {MLP_VERSION}, found {version}"),
        ));
    }

    // Optional provenance line.
    if let Some((_, line)) = lines.peek() {
        if line.starts_with("manifest ") {
            lines.next();
        }
    }

    let (no, line) = lines
        .next()
        .ok_or_else(|| Error::parse(2, "missing activation line"))?;
    let activation = match line.strip_prefix("activation ") {
        Some("tanh") => Activation::Tanh,
        Some(other) => {
            return Err(Error::parse(no + 1, format!("unknown activation `{other}`")))
        }
        None => return Err(Error::parse(no + 1, "missing activation line")),
    };

    let parse_vec = |prefix: &str,
                     entry: Option<(usize, &str)>|
     -> Result<Vec<f64>> {
        let (no, line) =
            entry.ok_or_else(|| Error::parse(0, format!("missing {prefix} line")))?;
        let rest = line
            .strip_prefix(prefix)
            .ok_or_else(|| Error::parse(no + 1, format!("expected `{prefix}` line")))?;
        rest.split_whitespace()
            .map(|s| parse_float(s, no + 1))
            .collect()
    };

    let mean = parse_vec("normalizer-mean", lines.next())?;
    let scale = parse_vec("normalizer-scale", lines.next())?;

    let (no, line) = lines
        .next()
        .ok_or_else(|| Error::parse(0, "missing layers line"))?;
    let sizes: Vec<usize> = line
        .strip_prefix("layers")
        .ok_or_else(|| Error::parse(no + 1, "expected `layers` line"))?
        .split_whitespace()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(no + 1, format!("bad layer size `{s}`")))
        })
        .collect::<Result<_>>()?;
    if sizes.len() < 2 {
        return Err(Error::parse(no + 1, "need at least input and output sizes"));
    }
    if mean.len() != sizes[0] || scale.len() != sizes[0] {
        return Err(Error::parse(no + 1, "normalizer does not match input size"));
    }

    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (l, w) in sizes.windows(2).enumerate() {
        let (rows, cols) = (w[1], w[0]);
        let (no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(0, format!("missing `layer {l}` line")))?;
        if line.trim() != format!("layer {l}") {
            return Err(Error::parse(no + 1, format!("expected `layer {l}`")));
        }
        let mut mat = Mat::zeros(rows, cols);
        for i in 0..rows {
            let (no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("truncated layer {l}")))?;
            let entries: Vec<f64> = line
                .split_whitespace()
                .map(|s| parse_float(s, no + 1))
                .collect::<Result<_>>()?;
            if entries.len() != cols {
                return Err(Error::parse(
                    no + 1,
                    format!("expected {cols} entries, found {}", entries.len()),
                ));
            }
            for (j, v) in entries.into_iter().enumerate() {
                mat.set(i, j, v);
            }
        }
        let (no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(0, format!("missing bias of layer {l}")))?;
        let rest = line
            .strip_prefix("bias ")
            .ok_or_else(|| Error::parse(no + 1, "expected `bias` line"))?;
        let b: Vec<f64> = rest
            .split_whitespace()
            .map(|s| parse_float(s, no + 1))
            .collect::<Result<_>>()?;
        if b.len() != rows {
            return Err(Error::parse(
                no + 1,
                format!("expected {rows} bias entries, found {}", b.len()),
            ));
        }
        weights.push(mat);
        biases.push(b);
    }

    Ok(MlpParams {
        layer_sizes: sizes,
        weights,
        biases,
        activation,
        normalizer: InputNormalizer { mean, scale },
    })
}

fn parse_float(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::parse(line, format!("cannot parse float from `{s}`")))
}

pub fn save_params(params: &MlpParams, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, params_to_string(params))?;
    Ok(())
}

pub fn load_params(path: &std::path::Path) -> Result<MlpParams> {
    let text = std::fs::read_to_string(path)?;
    params_from_str(&text)
}
