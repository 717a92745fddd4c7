//! Mini-batch SGD training with a fixed loss or with loss-conditional
//! sampling, plus evaluation and run manifests.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dist::LambdaPrior;
use crate::error::{Error, Result};
use crate::loss::{BinaryVsLoss, VsHyperParams};
use crate::metrics::{confusion, roc_curve, LabeledScores};
use crate::nn::{Gradients, MlpFilmModel, ModelConfig, OptimizerState};
use crate::seed::{self, Stream};

/// Multiply the rate by `factor` from `epoch` onwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Milestone {
    pub epoch: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    /// Applied cumulatively, in ascending epoch order.
    #[serde(default)]
    pub milestones: Vec<Milestone>,
}

impl LrSchedule {
    pub fn constant(rate: f64) -> Self {
        Self {
            initial: rate,
            milestones: Vec::new(),
        }
    }

    /// Rate in effect during `epoch` (zero-based).
    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.milestones
            .iter()
            .filter(|m| m.epoch <= epoch)
            .fold(self.initial, |r, m| r * m.factor)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            return Err(Error::domain(format!("learning rate {} must be > 0", self.initial)));
        }
        for w in self.milestones.windows(2) {
            if w[1].epoch <= w[0].epoch {
                return Err(Error::domain("learning-rate milestones must have increasing epochs"));
            }
        }
        if let Some(m) = self
            .milestones
            .iter()
            .find(|m| !(m.factor > 0.0 && m.factor.is_finite()))
        {
            return Err(Error::domain(format!("milestone factor {} must be > 0", m.factor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub schedule: LrSchedule,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_max_grad_norm")]
    pub max_grad_norm: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch_size() -> usize {
    128
}

fn default_momentum() -> f64 {
    OptimizerState::DEFAULT_MOMENTUM
}

fn default_max_grad_norm() -> f64 {
    OptimizerState::DEFAULT_MAX_GRAD_NORM
}

impl TrainConfig {
    pub const BASELINE_EPOCHS: usize = 200;
    pub const LCT_EPOCHS: usize = 300;

    pub fn new(epochs: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: default_batch_size(),
            schedule: LrSchedule::constant(learning_rate),
            momentum: default_momentum(),
            max_grad_norm: default_max_grad_norm(),
            seed,
        }
    }

    /// Rate `lr`, multiplied by 0.1 at 80% and again at 90% of the epochs.
    pub fn step_decay(epochs: usize, learning_rate: f64, seed: u64) -> Self {
        let mut cfg = Self::new(epochs, learning_rate, seed);
        cfg.schedule.milestones = vec![
            Milestone {
                epoch: epochs * 8 / 10,
                factor: 0.1,
            },
            Milestone {
                epoch: epochs * 9 / 10,
                factor: 0.1,
            },
        ];
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be >= 1"));
        }
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::domain(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::domain(format!(
                "max grad norm {} must be > 0",
                self.max_grad_norm
            )));
        }
        Ok(())
    }
}

/// A loss hyperparameter that is either fixed or drawn per mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperSetting {
    Constant(f64),
    Conditioned(LambdaPrior),
}

/// Which of `(Ω, γ, τ)` are fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LambdaRole {
    pub omega: bool,
    pub gamma: bool,
    pub tau: bool,
}

impl fmt::Display for LambdaRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.omega, "omega"), (self.gamma, "gamma"), (self.tau, "tau")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join("+"))
        }
    }
}

/// Loss-conditional setup. The conditioning vector lists the conditioned
/// hyperparameters in the order `(Ω, γ, τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LctConfig {
    pub omega: HyperSetting,
    pub gamma: HyperSetting,
    pub tau: HyperSetting,
    /// Conditioning vector used by [`evaluate`] after training.
    pub eval_lambda: Vec<f64>,
}

impl LctConfig {
    /// `λ = τ` with constant `Ω` and `γ`.
    pub fn tau_only(omega: f64, gamma: f64, prior: LambdaPrior, eval_tau: f64) -> Self {
        Self {
            omega: HyperSetting::Constant(omega),
            gamma: HyperSetting::Constant(gamma),
            tau: HyperSetting::Conditioned(prior),
            eval_lambda: vec![eval_tau],
        }
    }

    fn settings(&self) -> [HyperSetting; 3] {
        [self.omega, self.gamma, self.tau]
    }

    pub fn role(&self) -> LambdaRole {
        let c = self.settings().map(|s| matches!(s, HyperSetting::Conditioned(_)));
        LambdaRole {
            omega: c[0],
            gamma: c[1],
            tau: c[2],
        }
    }

    pub fn lambda_dim(&self) -> usize {
        self.settings()
            .iter()
            .filter(|s| matches!(s, HyperSetting::Conditioned(_)))
            .count()
    }

    /// Loss hyperparameters selected by a conditioning vector.
    pub fn params_for(&self, lambda: &[f64]) -> Result<VsHyperParams> {
        if lambda.len() != self.lambda_dim() {
            return Err(Error::Dimension {
                what: "conditioning vector",
                expected: self.lambda_dim(),
                got: lambda.len(),
            });
        }
        let mut next = lambda.iter();
        let mut values = [0.0; 3];
        for (v, s) in values.iter_mut().zip(self.settings()) {
            *v = match s {
                HyperSetting::Constant(c) => c,
                HyperSetting::Conditioned(_) => *next.next().expect("length checked"),
            };
        }
        VsHyperParams::new(values[0], values[1], values[2])
    }

    /// Every hyperparameter value the configuration can produce must be valid.
    pub fn validate(&self) -> Result<()> {
        if self.lambda_dim() == 0 {
            return Err(Error::domain("no hyperparameter is conditioned"));
        }
        let corner = |pick: fn((f64, f64)) -> f64| -> Vec<f64> {
            self.settings()
                .iter()
                .filter_map(|s| match s {
                    HyperSetting::Conditioned(p) => Some(pick(p.support())),
                    HyperSetting::Constant(_) => None,
                })
                .collect()
        };
        self.params_for(&corner(|s| s.0))?;
        self.params_for(&corner(|s| s.1))?;
        self.params_for(&self.eval_lambda)?;
        Ok(())
    }

    fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R, lambda: &mut Vec<f64>) {
        lambda.clear();
        for s in self.settings() {
            if let HyperSetting::Conditioned(p) = s {
                lambda.push(p.sample(rng));
            }
        }
    }
}

/// Per-batch notification passed to a [`TrainObserver`].
#[derive(Debug, Clone, Copy)]
pub struct BatchEvent<'a> {
    pub epoch: usize,
    /// Batch index within the epoch.
    pub batch: usize,
    /// Conditioning vector fed to the network for this batch.
    pub conditioning: &'a [f64],
    /// Hyperparameters used in this batch's loss.
    pub params: VsHyperParams,
    pub learning_rate: f64,
    /// Mean loss of the batch before the update.
    pub loss: f64,
}

pub trait TrainObserver {
    fn on_batch(&mut self, event: &BatchEvent<'_>);
}

impl TrainObserver for () {
    fn on_batch(&mut self, _: &BatchEvent<'_>) {}
}

impl<F: FnMut(&BatchEvent<'_>)> TrainObserver for F {
    fn on_batch(&mut self, event: &BatchEvent<'_>) {
        self(event)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub batches: usize,
    /// Number of conditioning draws; equals `batches` for loss-conditional runs.
    pub lambda_draws: usize,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Builds a model with parameters drawn from the seed's init stream.
pub fn init_model(config: ModelConfig, seed: u64) -> Result<MlpFilmModel> {
    MlpFilmModel::new(config, &mut seed::rng(seed, Stream::Init))
}

enum Conditioning<'a> {
    Fixed { lambda: &'a [f64], params: VsHyperParams },
    Sampled(&'a LctConfig),
}

fn run(
    model: &mut MlpFilmModel,
    data: &Dataset,
    cfg: &TrainConfig,
    conditioning: Conditioning<'_>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainReport> {
    cfg.validate()?;
    if model.input_dim() != data.dim() {
        return Err(Error::Dimension {
            what: "dataset features",
            expected: model.input_dim(),
            got: data.dim(),
        });
    }
    let beta = data.class_counts()?.beta();
    let mut lambda = Vec::with_capacity(model.lambda_dim());
    let mut fixed_loss = None;
    match &conditioning {
        Conditioning::Fixed { lambda: l, params } => {
            lambda.extend_from_slice(l);
            fixed_loss = Some((*params, BinaryVsLoss::new(*params, beta)?));
        }
        Conditioning::Sampled(lct) => lct.validate()?,
    }
    let want = match &conditioning {
        Conditioning::Fixed { lambda, .. } => lambda.len(),
        Conditioning::Sampled(lct) => lct.lambda_dim(),
    };
    if want != model.lambda_dim() {
        return Err(Error::Dimension {
            what: "conditioning vector",
            expected: model.lambda_dim(),
            got: want,
        });
    }

    let mut opt = OptimizerState::new(model, cfg.schedule.initial, cfg.momentum, cfg.max_grad_norm);
    let mut grads = Gradients::zeros_like(model);
    let mut shuffle_rng = seed::rng(cfg.seed, Stream::Shuffle);
    let mut lambda_rng = seed::rng(cfg.seed, Stream::Lambda);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        opt.learning_rate = cfg.schedule.rate_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (params, loss_fn) = match (&conditioning, fixed_loss) {
                (_, Some(fixed)) => fixed,
                (Conditioning::Sampled(lct), None) => {
                    lct.draw(&mut lambda_rng, &mut lambda);
                    report.lambda_draws += 1;
                    let p = lct.params_for(&lambda)?;
                    (p, BinaryVsLoss::new_unchecked(p, beta))
                }
                (Conditioning::Fixed { .. }, None) => unreachable!(),
            };
            let rows = idx.iter().map(|&i| (data.row(i), data.label(i)));
            let loss = model.backward_batch(rows, &lambda, &loss_fn, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            observer.on_batch(&BatchEvent {
                epoch,
                batch,
                conditioning: &lambda,
                params,
                learning_rate: opt.learning_rate,
                loss,
            });
            opt.step(model.tensors_mut(), &mut grads)?;
            epoch_loss += loss;
            n_batches += 1;
        }
        report.batches += n_batches;
        report.epoch_losses.push(epoch_loss / n_batches.max(1) as f64);
    }
    Ok(report)
}

/// Trains with one fixed loss and a fixed conditioning vector.
pub fn train_fixed(
    model: &mut MlpFilmModel,
    data: &Dataset,
    params: VsHyperParams,
    conditioning: &[f64],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainReport> {
    run(
        model,
        data,
        cfg,
        Conditioning::Fixed {
            lambda: conditioning,
            params,
        },
        observer,
    )
}

/// Single-loss training; the conditioning input is held at zero.
pub fn train_baseline(
    model: &mut MlpFilmModel,
    data: &Dataset,
    params: VsHyperParams,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let zeros = vec![0.0; model.lambda_dim()];
    train_fixed(model, data, params, &zeros, cfg, &mut ())
}

/// Loss-conditional training: each mini-batch draws one λ, feeds it to the
/// network and uses it in that batch's loss.
pub fn train_lct(model: &mut MlpFilmModel, data: &Dataset, lct: &LctConfig, cfg: &TrainConfig) -> Result<TrainReport> {
    train_lct_observed(model, data, lct, cfg, &mut ())
}

pub fn train_lct_observed(
    model: &mut MlpFilmModel,
    data: &Dataset,
    lct: &LctConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainReport> {
    run(model, data, cfg, Conditioning::Sampled(lct), observer)
}

/// Minority-class probability for every test sample at a fixed conditioning vector.
pub fn evaluate(model: &MlpFilmModel, test: &Dataset, eval_lambda: &[f64]) -> Result<LabeledScores> {
    let logits = model.forward_many(test.rows(), eval_lambda)?;
    LabeledScores::new(logits.iter().map(|z| z.p1()).collect(), test.labels().to_vec())
}

/// [`evaluate`] with the zero conditioning vector used by baseline models.
pub fn evaluate_baseline(model: &MlpFilmModel, test: &Dataset) -> Result<LabeledScores> {
    evaluate(model, test, &vec![0.0; model.lambda_dim()])
}

/// Headline test metrics of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub auc: f64,
    /// Overall accuracy at threshold 0.5.
    pub accuracy: f64,
    /// True-positive rate at threshold 0.5.
    pub tpr: f64,
    /// False-positive rate at threshold 0.5.
    pub fpr: f64,
}

impl RunMetrics {
    /// Needs both classes present in `scores`.
    pub fn from_scores(scores: &LabeledScores) -> Result<Self> {
        let roc = roc_curve(scores)?;
        let c = confusion(scores, 0.5);
        let missing = || Error::Insufficient("scores need both classes".into());
        Ok(Self {
            auc: roc.auc,
            accuracy: c.overall_accuracy().ok_or_else(missing)?,
            tpr: c.tpr().ok_or_else(missing)?,
            fpr: c.fpr().ok_or_else(missing)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum RunMethod {
    Baseline { params: VsHyperParams },
    Lct { lct: LctConfig, role: String },
}

/// JSON record describing one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub method: RunMethod,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub report: TrainReport,
    pub metrics: Option<RunMetrics>,
    pub checkpoint: Option<PathBuf>,
}

impl RunManifest {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
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
