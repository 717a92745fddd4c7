//! A small dense classifier with one FiLM conditioning block.
//!
//! ```text
//! x ──► Dense ─ReLU─► … ─► Dense ─ReLU─► f ──► f̃ = σ∘f + μ ──► Dense ──► (z0, z1)
//!                                              ▲
//! λ ──► Dense ─ReLU─► Dense ──► (μ[, σ − 1]) ───┘
//! ```
//!
//! In additive mode the FiLM block only produces `μ` and `σ ≡ 1`; in affine
//! mode its second layer has `2C` outputs, the first `C` are `μ` and the rest
//! are `σ − 1`. Gradients are computed by hand; the FiLM block is evaluated
//! once per mini-batch since every sample in a batch shares one `λ`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{BinaryVsLoss, LogitPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilmMode {
    /// `f̃ = f + μ`.
    Additive,
    /// `f̃ = σ∘f + μ`.
    Affine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Widths of the rectified trunk layers; the last one is the FiLM channel count.
    pub hidden: Vec<usize>,
    /// Length of the conditioning vector λ.
    pub lambda_dim: usize,
    /// Hidden width of the FiLM generator.
    pub film_hidden: usize,
    pub film_mode: FilmMode,
    /// Start the FiLM output layer at zero so the block begins as the identity.
    #[serde(default = "default_true")]
    pub zero_init_film: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden: vec![64, 64],
            lambda_dim: 1,
            film_hidden: 128,
            film_mode: FilmMode::Additive,
            zero_init_film: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.lambda_dim == 0 || self.film_hidden == 0 {
            return Err(Error::domain("model dimensions must be >= 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::domain("trunk needs at least one layer of nonzero width"));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        *self.hidden.last().expect("validated trunk")
    }
}

/// Fully connected layer `y = W x + b`, weights stored row-major (out × in).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    /// Uniform in `±1/sqrt(fan_in)` for weights and biases.
    pub fn fan_in_uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        let weights = (0..in_dim * out_dim).map(|_| draw()).collect();
        let biases = (0..out_dim).map(|_| draw()).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            biases,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    #[inline]
    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.in_dim).zip(&self.biases))
        {
            *o = row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi);
        }
    }

    /// Accumulates `dW += d_out ⊗ x`, `db += d_out`, and writes `Wᵀ d_out`.
    #[inline]
    fn backward_into(
        &self,
        x: &[f64],
        d_out: &[f64],
        d_weights: &mut [f64],
        d_biases: &mut [f64],
        d_in: Option<&mut [f64]>,
    ) {
        for ((dw_row, db), &g) in d_weights
            .chunks_exact_mut(self.in_dim)
            .zip(d_biases.iter_mut())
            .zip(d_out)
        {
            *db += g;
            if g != 0.0 {
                for (dw, xi) in dw_row.iter_mut().zip(x) {
                    *dw += g * xi;
                }
            }
        }
        if let Some(d_in) = d_in {
            d_in.fill(0.0);
            for (row, &g) in self.weights.chunks_exact(self.in_dim).zip(d_out) {
                if g != 0.0 {
                    for (d, w) in d_in.iter_mut().zip(row) {
                        *d += g * w;
                    }
                }
            }
        }
    }
}

/// Small generator network producing the FiLM coefficients from λ.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmBlock {
    pub layer1: DenseLayer,
    pub layer2: DenseLayer,
    pub mode: FilmMode,
}

impl FilmBlock {
    pub fn channels(&self) -> usize {
        match self.mode {
            FilmMode::Additive => self.layer2.out_dim(),
            FilmMode::Affine => self.layer2.out_dim() / 2,
        }
    }

    /// Number of weight entries (biases excluded) in both layers.
    pub fn weight_count(&self) -> usize {
        self.layer1.weights.len() + self.layer2.weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.layer1.biases.len() + self.layer2.biases.len()
    }

    fn modulate(&self, lambda: &[f64]) -> Modulation {
        let hidden_dim = self.layer1.out_dim();
        let mut pre = vec![0.0; hidden_dim];
        self.layer1.forward_into(lambda, &mut pre);
        let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let mut raw = vec![0.0; self.layer2.out_dim()];
        self.layer2.forward_into(&hidden, &mut raw);
        let c = self.channels();
        let mu = raw[..c].to_vec();
        let sigma = match self.mode {
            FilmMode::Additive => vec![1.0; c],
            FilmMode::Affine => raw[c..].iter().map(|&v| 1.0 + v).collect(),
        };
        Modulation {
            hidden_pre: pre,
            hidden,
            mu,
            sigma,
        }
    }
}

/// FiLM coefficients for one λ plus what backprop needs.
#[derive(Debug, Clone)]
struct Modulation {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

/// The conditioned classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpFilmModel {
    config: ModelConfig,
    pub trunk: Vec<DenseLayer>,
    pub film: FilmBlock,
    pub head: DenseLayer,
}

impl MlpFilmModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut trunk = Vec::with_capacity(config.hidden.len());
        let mut prev = config.input_dim;
        for &width in &config.hidden {
            trunk.push(DenseLayer::fan_in_uniform(prev, width, rng));
            prev = width;
        }
        let channels = config.channels();
        let film_out = match config.film_mode {
            FilmMode::Additive => channels,
            FilmMode::Affine => 2 * channels,
        };
        let layer1 = DenseLayer::fan_in_uniform(config.lambda_dim, config.film_hidden, rng);
        let layer2 = if config.zero_init_film {
            DenseLayer::zeros(config.film_hidden, film_out)
        } else {
            DenseLayer::fan_in_uniform(config.film_hidden, film_out, rng)
        };
        let head = DenseLayer::fan_in_uniform(channels, 2, rng);
        Ok(Self {
            film: FilmBlock {
                layer1,
                layer2,
                mode: config.film_mode,
            },
            config,
            trunk,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn lambda_dim(&self) -> usize {
        self.config.lambda_dim
    }

    fn check_dims(&self, x: &[f64], lambda: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                what: "input features",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        self.check_lambda(lambda)
    }

    fn check_lambda(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.lambda_dim() {
            return Err(Error::Dimension {
                what: "conditioning vector",
                expected: self.lambda_dim(),
                got: lambda.len(),
            });
        }
        Ok(())
    }

    /// Names of the parameter tensors, in the order used by [`Gradients`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.trunk.len() {
            names.push(format!("trunk.{i}.weight"));
            names.push(format!("trunk.{i}.bias"));
        }
        for n in [
            "film.0.weight",
            "film.0.bias",
            "film.1.weight",
            "film.1.bias",
            "head.weight",
            "head.bias",
        ] {
            names.push(n.to_string());
        }
        names
    }

    /// Shapes matching [`Self::tensor_names`]; biases are one-dimensional.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        self.layers()
            .flat_map(|l| [vec![l.out_dim(), l.in_dim()], vec![l.out_dim()]])
            .collect()
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.trunk
            .iter()
            .chain([&self.film.layer1, &self.film.layer2, &self.head])
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .flat_map(|l| [l.weights.as_slice(), l.biases.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.trunk
            .iter_mut()
            .chain([&mut self.film.layer1, &mut self.film.layer2, &mut self.head])
            .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn trunk_forward(&self, x: &[f64], acts: &mut TrunkActivations) {
        let mut input: &[f64] = x;
        for (layer, (pre, post)) in self.trunk.iter().zip(acts.pre.iter_mut().zip(acts.post.iter_mut())) {
            layer.forward_into(input, pre);
            for (p, &v) in post.iter_mut().zip(pre.iter()) {
                *p = v.max(0.0);
            }
            input = post;
        }
    }

    fn head_forward(&self, features: &[f64], modulation: &Modulation, modulated: &mut [f64]) -> (f64, f64) {
        for (((m, &f), &s), &u) in modulated
            .iter_mut()
            .zip(features)
            .zip(&modulation.sigma)
            .zip(&modulation.mu)
        {
            *m = s * f + u;
        }
        let mut z = [0.0; 2];
        self.head.forward_into(modulated, &mut z);
        (z[0], z[1])
    }

    pub fn forward(&self, x: &[f64], lambda: &[f64]) -> Result<LogitPair> {
        self.check_dims(x, lambda)?;
        let modulation = self.film.modulate(lambda);
        let mut acts = TrunkActivations::new(self);
        let mut modulated = vec![0.0; self.config.channels()];
        self.trunk_forward(x, &mut acts);
        let (z0, z1) = self.head_forward(acts.output(), &modulation, &mut modulated);
        Ok(LogitPair { z0, z1 })
    }

    /// Smallest `|pre-activation|` over every ReLU unit, trunk and FiLM,
    /// when evaluating `x` at `lambda`. Finite differences with a step well
    /// below this margin never cross a kink.
    pub fn relu_margin(&self, x: &[f64], lambda: &[f64]) -> Result<f64> {
        self.check_dims(x, lambda)?;
        let modulation = self.film.modulate(lambda);
        let mut acts = TrunkActivations::new(self);
        self.trunk_forward(x, &mut acts);
        Ok(acts
            .pre
            .iter()
            .flatten()
            .chain(&modulation.hidden_pre)
            .fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }

    /// Logits for many inputs sharing one λ.
    pub fn forward_many<'a, I>(&self, inputs: I, lambda: &[f64]) -> Result<Vec<LogitPair>>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        self.check_lambda(lambda)?;
        let modulation = self.film.modulate(lambda);
        let mut acts = TrunkActivations::new(self);
        let mut modulated = vec![0.0; self.config.channels()];
        inputs
            .into_iter()
            .map(|x| {
                if x.len() != self.input_dim() {
                    return Err(Error::Dimension {
                        what: "input features",
                        expected: self.input_dim(),
                        got: x.len(),
                    });
                }
                self.trunk_forward(x, &mut acts);
                let (z0, z1) = self.head_forward(acts.output(), &modulation, &mut modulated);
                Ok(LogitPair { z0, z1 })
            })
            .collect()
    }

    /// Mean loss over a batch sharing one λ; forward only.
    pub fn batch_loss<'a, I>(&self, batch: I, lambda: &[f64], loss: &BinaryVsLoss) -> Result<f64>
    where
        I: IntoIterator<Item = (&'a [f64], u8)>,
    {
        let (xs, ys): (Vec<&[f64]>, Vec<u8>) = batch.into_iter().unzip();
        if xs.is_empty() {
            return Err(Error::Insufficient("empty batch".into()));
        }
        let logits = self.forward_many(xs, lambda)?;
        let total: f64 = logits.iter().zip(&ys).map(|(z, &y)| loss.loss(y, z.z0, z.z1)).sum();
        Ok(total / ys.len() as f64)
    }

    /// Mean batch loss and its exact gradient with respect to every parameter.
    ///
    /// `grads` is overwritten.
    pub fn backward_batch<'a, I>(
        &self,
        batch: I,
        lambda: &[f64],
        loss: &BinaryVsLoss,
        grads: &mut Gradients,
    ) -> Result<f64>
    where
        I: IntoIterator<Item = (&'a [f64], u8)>,
    {
        self.check_lambda(lambda)?;
        grads.reset_like(self);
        let modulation = self.film.modulate(lambda);
        let channels = self.config.channels();
        let mut acts = TrunkActivations::new(self);
        let mut modulated = vec![0.0; channels];
        let mut d_mu = vec![0.0; channels];
        let mut d_sigma = vec![0.0; channels];
        let mut d_features = vec![0.0; channels];
        let max_width = self.config.hidden.iter().copied().max().unwrap_or(0);
        let mut d_cur = vec![0.0; max_width];
        let mut d_prev = vec![0.0; max_width];

        let n_trunk = self.trunk.len();
        let head_slot = 2 * (n_trunk + 2);
        let mut total = 0.0;
        let mut count = 0usize;
        for (x, y) in batch {
            if x.len() != self.input_dim() {
                return Err(Error::Dimension {
                    what: "input features",
                    expected: self.input_dim(),
                    got: x.len(),
                });
            }
            self.trunk_forward(x, &mut acts);
            let features = acts.output();
            let (z0, z1) = self.head_forward(features, &modulation, &mut modulated);
            let (l, g0, g1) = loss.loss_and_grad(y, z0, z1);
            total += l;
            count += 1;

            let (dw, db) = grads.pair_mut(head_slot);
            self.head
                .backward_into(&modulated, &[g0, g1], dw, db, Some(&mut d_features));
            // through f̃ = σ∘f + μ
            for c in 0..channels {
                let g = d_features[c];
                d_mu[c] += g;
                d_sigma[c] += g * features[c];
                d_features[c] = g * modulation.sigma[c];
            }
            // through the rectified trunk, last layer first
            let mut upstream: &mut Vec<f64> = &mut d_cur;
            let mut spare: &mut Vec<f64> = &mut d_prev;
            upstream[..channels].copy_from_slice(&d_features);
            for li in (0..n_trunk).rev() {
                let layer = &self.trunk[li];
                let width = layer.out_dim();
                for (g, &pre) in upstream[..width].iter_mut().zip(&acts.pre[li]) {
                    if pre <= 0.0 {
                        *g = 0.0;
                    }
                }
                let input: &[f64] = if li == 0 { x } else { &acts.post[li - 1] };
                let (dw, db) = grads.pair_mut(2 * li);
                let d_in = if li == 0 {
                    None
                } else {
                    Some(&mut spare[..layer.in_dim()])
                };
                layer.backward_into(input, &upstream[..width], dw, db, d_in);
                std::mem::swap(&mut upstream, &mut spare);
            }
        }
        if count == 0 {
            return Err(Error::Insufficient("empty batch".into()));
        }

        // FiLM generator, once per batch
        let film_out: Vec<f64> = match self.film.mode {
            FilmMode::Additive => d_mu,
            FilmMode::Affine => d_mu.into_iter().chain(d_sigma).collect(),
        };
        let mut d_hidden = vec![0.0; self.film.layer1.out_dim()];
        let (dw, db) = grads.pair_mut(2 * n_trunk + 2);
        self.film
            .layer2
            .backward_into(&modulation.hidden, &film_out, dw, db, Some(&mut d_hidden));
        for (g, &pre) in d_hidden.iter_mut().zip(&modulation.hidden_pre) {
            if pre <= 0.0 {
                *g = 0.0;
            }
        }
        let (dw, db) = grads.pair_mut(2 * n_trunk);
        self.film.layer1.backward_into(lambda, &d_hidden, dw, db, None);

        let inv = 1.0 / count as f64;
        grads.scale(inv);
        Ok(total * inv)
    }

    /// Loss and gradients for a single sample.
    pub fn backward(&self, x: &[f64], lambda: &[f64], y: u8, loss: &BinaryVsLoss) -> Result<(f64, Gradients)> {
        self.check_dims(x, lambda)?;
        let mut grads = Gradients::zeros_like(self);
        let l = self.backward_batch([(x, y)], lambda, loss, &mut grads)?;
        Ok((l, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let tensors = self
            .tensor_names()
            .into_iter()
            .zip(self.tensor_shapes())
            .zip(self.tensors())
            .map(|((name, shape), data)| NamedTensor {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        Checkpoint {
            config: self.config.clone(),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let mut rng = crate::seed::rng(0, crate::seed::Stream::Init);
        let mut model = Self::new(ckpt.config.clone(), &mut rng)?;
        let names = model.tensor_names();
        let shapes = model.tensor_shapes();
        if ckpt.tensors.len() != names.len() {
            return Err(Error::Dimension {
                what: "checkpoint tensor count",
                expected: names.len(),
                got: ckpt.tensors.len(),
            });
        }
        for (((slot, name), shape), t) in model
            .tensors_mut()
            .into_iter()
            .zip(&names)
            .zip(&shapes)
            .zip(&ckpt.tensors)
        {
            if &t.name != name || &t.shape != shape || t.data.len() != slot.len() {
                return Err(Error::domain(format!(
                    "checkpoint tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, name, shape
                )));
            }
            slot.copy_from_slice(&t.data);
        }
        Ok(model)
    }
}

struct TrunkActivations {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl TrunkActivations {
    fn new(model: &MlpFilmModel) -> Self {
        let pre: Vec<Vec<f64>> = model.config.hidden.iter().map(|&w| vec![0.0; w]).collect();
        Self { post: pre.clone(), pre }
    }

    fn output(&self) -> &[f64] {
        self.post.last().expect("non-empty trunk")
    }
}

/// Parameter gradients, one buffer per tensor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpFilmModel) -> Self {
        Self {
            tensors: model.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    fn reset_like(&mut self, model: &MlpFilmModel) {
        let tensors = model.tensors();
        let same_shape =
            self.tensors.len() == tensors.len() && self.tensors.iter().zip(&tensors).all(|(g, t)| g.len() == t.len());
        if same_shape {
            self.tensors.iter_mut().for_each(|g| g.fill(0.0));
        } else {
            *self = Self::zeros_like(model);
        }
    }

    fn pair_mut(&mut self, weight_index: usize) -> (&mut [f64], &mut [f64]) {
        let (a, b) = self.tensors.split_at_mut(weight_index + 1);
        (&mut a[weight_index], &mut b[0])
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors.iter_mut().flatten().for_each(|g| *g *= factor);
    }
}

/// SGD with momentum and global-norm gradient clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_grad_norm: f64,
    velocity: Vec<Vec<f64>>,
}

/// What one optimizer step did to the gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    /// Factor applied to the gradient before the update (1 when unclipped).
    pub clip_scale: f64,
}

impl OptimizerState {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_MAX_GRAD_NORM: f64 = 0.5;

    pub fn new(model: &MlpFilmModel, learning_rate: f64, momentum: f64, max_grad_norm: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            max_grad_norm,
            velocity: model.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Clips `grads` to the global max-norm, then applies
    /// `v ← m·v + g; p ← p − lr·v` to every tensor.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &mut Gradients) -> Result<StepInfo> {
        if params.len() != self.velocity.len() || grads.tensors.len() != self.velocity.len() {
            return Err(Error::Dimension {
                what: "optimizer tensors",
                expected: self.velocity.len(),
                got: params.len().min(grads.tensors.len()),
            });
        }
        let grad_norm = grads.global_norm();
        let clip_scale = if grad_norm > self.max_grad_norm {
            self.max_grad_norm / grad_norm
        } else {
            1.0
        };
        if clip_scale != 1.0 {
            grads.scale(clip_scale);
        }
        for ((p, v), g) in params.into_iter().zip(&mut self.velocity).zip(&grads.tensors) {
            if p.len() != v.len() || g.len() != v.len() {
                return Err(Error::Dimension {
                    what: "optimizer tensor length",
                    expected: v.len(),
                    got: p.len(),
                });
            }
            for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = self.momentum * *vi + gi;
                *pi -= self.learning_rate * *vi;
            }
        }
        Ok(StepInfo { grad_norm, clip_scale })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Model parameters plus the configuration that produced them.
///
/// The JSON encoding round-trips every `f64` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::VsHyperParams;
    use crate::seed::{rng, Stream};

    fn reference_film_config() -> ModelConfig {
        ModelConfig {
            input_dim: 3,
            hidden: vec![16, 64],
            lambda_dim: 1,
            film_hidden: 128,
            film_mode: FilmMode::Additive,
            zero_init_film: true,
        }
    }

    #[test]
    #[allow(clippy::identity_op)]
    fn film_weight_count_matches_reference_configuration() {
        let model = MlpFilmModel::new(reference_film_config(), &mut rng(0, Stream::Init)).unwrap();
        assert_eq!(model.film.weight_count(), 1 * 128 + 128 * 64);
        assert_eq!(model.film.weight_count(), 8320);
    }

    #[test]
    fn affine_mode_doubles_generator_outputs() {
        let cfg = ModelConfig {
            film_mode: FilmMode::Affine,
            ..reference_film_config()
        };
        let model = MlpFilmModel::new(cfg, &mut rng(0, Stream::Init)).unwrap();
        assert_eq!(model.film.layer2.out_dim(), 128);
        assert_eq!(model.film.channels(), 64);
    }

    #[test]
    fn zero_film_is_identity_for_every_lambda() {
        let model = MlpFilmModel::new(reference_film_config(), &mut rng(3, Stream::Init)).unwrap();
        let x = [0.3, -1.2, 2.0];
        let a = model.forward(&x, &[0.0]).unwrap();
        let b = model.forward(&x, &[2.7]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn affine_identity_modulation() {
        let cfg = ModelConfig {
            film_mode: FilmMode::Affine,
            ..reference_film_config()
        };
        let model = MlpFilmModel::new(cfg, &mut rng(3, Stream::Init)).unwrap();
        // zero second layer => μ = 0, σ = 1
        let x = [0.3, -1.2, 2.0];
        let modulation = model.film.modulate(&[1.5]);
        assert!(modulation.mu.iter().all(|&m| m == 0.0));
        assert!(modulation.sigma.iter().all(|&s| s == 1.0));
        assert_eq!(model.forward(&x, &[0.0]).unwrap(), model.forward(&x, &[1.5]).unwrap());
    }

    /// One hidden unit, everything set by hand:
    /// f = relu(x), h = relu(λ), μ = h, head z0 = 0, z1 = f̃.
    #[test]
    fn hand_built_conditioning_changes_logits() {
        let cfg = ModelConfig {
            input_dim: 1,
            hidden: vec![1],
            lambda_dim: 1,
            film_hidden: 1,
            film_mode: FilmMode::Additive,
            zero_init_film: true,
        };
        let mut model = MlpFilmModel::new(cfg, &mut rng(0, Stream::Init)).unwrap();
        model.trunk[0].weights = vec![1.0];
        model.trunk[0].biases = vec![0.0];
        model.film.layer1.weights = vec![1.0];
        model.film.layer1.biases = vec![0.0];
        model.film.layer2.weights = vec![1.0];
        model.film.layer2.biases = vec![0.0];
        model.head.weights = vec![0.0, 1.0];
        model.head.biases = vec![0.0, 0.0];
        let a = model.forward(&[2.0], &[0.5]).unwrap();
        let b = model.forward(&[2.0], &[3.0]).unwrap();
        assert_eq!(a, LogitPair { z0: 0.0, z1: 2.5 });
        assert_eq!(b, LogitPair { z0: 0.0, z1: 5.0 });
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let model = MlpFilmModel::new(reference_film_config(), &mut rng(0, Stream::Init)).unwrap();
        assert!(matches!(model.forward(&[1.0], &[0.0]), Err(Error::Dimension { .. })));
        assert!(matches!(
            model.forward(&[1.0, 2.0, 3.0], &[0.0, 1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn tensor_listing_is_consistent() {
        let model = MlpFilmModel::new(reference_film_config(), &mut rng(0, Stream::Init)).unwrap();
        let names = model.tensor_names();
        let shapes = model.tensor_shapes();
        let tensors = model.tensors();
        assert_eq!(names.len(), shapes.len());
        assert_eq!(names.len(), tensors.len());
        for (s, t) in shapes.iter().zip(&tensors) {
            assert_eq!(s.iter().product::<usize>(), t.len());
        }
        assert_eq!(names[4], "film.0.weight");
    }

    #[test]
    fn clipping_scales_by_max_over_norm() {
        let cfg = ModelConfig {
            input_dim: 1,
            hidden: vec![1],
            lambda_dim: 1,
            film_hidden: 1,
            film_mode: FilmMode::Additive,
            zero_init_film: true,
        };
        let mut model = MlpFilmModel::new(cfg, &mut rng(0, Stream::Init)).unwrap();
        let before: Vec<Vec<f64>> = model.tensors().iter().map(|t| t.to_vec()).collect();
        let mut grads = Gradients::zeros_like(&model);
        grads.tensors[0][0] = 3.0;
        grads.tensors[1][0] = 4.0;
        let mut opt = OptimizerState::new(&model, 1.0, 0.0, 0.5);
        let info = opt.step(model.tensors_mut(), &mut grads).unwrap();
        assert_eq!(info.grad_norm, 5.0);
        assert!((info.clip_scale - 0.1).abs() < 1e-15);
        let after = model.tensors();
        assert!((before[0][0] - after[0][0] - 0.3).abs() < 1e-15);
        assert!((before[1][0] - after[1][0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn plain_step_subtracts_gradient() {
        let model0 = MlpFilmModel::new(reference_film_config(), &mut rng(1, Stream::Init)).unwrap();
        let mut model = model0.clone();
        let mut grads = Gradients::zeros_like(&model);
        grads.tensors[2][5] = 0.25;
        grads.tensors[9][1] = -0.125;
        let mut opt = OptimizerState::new(&model, 1.0, 0.0, f64::INFINITY);
        opt.step(model.tensors_mut(), &mut grads).unwrap();
        assert_eq!(model.tensors()[2][5], model0.tensors()[2][5] - 0.25);
        assert_eq!(model.tensors()[9][1], model0.tensors()[9][1] + 0.125);
        assert_eq!(model.tensors()[0], model0.tensors()[0]);
    }

    #[test]
    fn momentum_second_displacement_is_one_point_nine_times_first() {
        let model0 = MlpFilmModel::new(reference_film_config(), &mut rng(1, Stream::Init)).unwrap();
        let mut model = model0.clone();
        let mut opt = OptimizerState::new(&model, 0.01, 0.9, f64::INFINITY);
        let mk = |m: &MlpFilmModel| {
            let mut g = Gradients::zeros_like(m);
            g.tensors[0][0] = 0.2;
            g
        };
        let p0 = model.tensors()[0][0];
        opt.step(model.tensors_mut(), &mut mk(&model0)).unwrap();
        let p1 = model.tensors()[0][0];
        opt.step(model.tensors_mut(), &mut mk(&model0)).unwrap();
        let p2 = model.tensors()[0][0];
        let first = p0 - p1;
        let second = p1 - p2;
        assert!((second / first - 1.9).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let model0 = MlpFilmModel::new(reference_film_config(), &mut rng(1, Stream::Init)).unwrap();
        let mut model = model0.clone();
        let loss = BinaryVsLoss::new(VsHyperParams::cross_entropy(), 10.0).unwrap();
        let mut grads = Gradients::zeros_like(&model);
        model
            .backward_batch([(&[0.1, 0.2, 0.3][..], 1)], &[1.0], &loss, &mut grads)
            .unwrap();
        let mut opt = OptimizerState::new(&model, 0.0, 0.9, 0.5);
        opt.step(model.tensors_mut(), &mut grads).unwrap();
        assert_eq!(model, model0);
    }

    #[test]
    fn checkpoint_round_trip_through_json() {
        let model = MlpFilmModel::new(reference_film_config(), &mut rng(11, Stream::Init)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        model.to_checkpoint().save_json(&path).unwrap();
        let back = MlpFilmModel::from_checkpoint(&Checkpoint::load_json(&path).unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
