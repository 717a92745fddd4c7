//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use lct_core::analysis::{SweepGrid, SweepSpec};
use lct_core::data::{self, Dataset};
use lct_core::loss::VsHyperParams;
use lct_core::nn::ModelConfig;
use lct_core::train::{LctConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSection::default(),
            model: ModelConfig::default(),
            loss: LossSection::default(),
            train: default_train(),
            sweep: None,
            output: None,
        }
    }
}

fn default_train() -> TrainConfig {
    TrainConfig::step_decay(TrainConfig::BASELINE_EPOCHS, 0.1, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DataSource,
    /// How the held-out test set is obtained.
    pub test: TestSource,
    /// Minority subsampling applied to the training part only.
    #[serde(default)]
    pub target_beta: Option<f64>,
    /// Seed for generation, splitting and subsampling.
    #[serde(default)]
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic {
                n0: 2500,
                n1: 2500,
                dim: 2,
                separation: 2.5,
            },
            test: TestSource::Counts { n0: 500, n1: 500 },
            target_beta: Some(100.0),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        n0: usize,
        n1: usize,
        dim: usize,
        separation: f64,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestSource {
    /// Exact per-class counts drawn from the source.
    Counts { n0: usize, n1: usize },
    /// Per-class fraction drawn from the source.
    Fraction { fraction: f64 },
    /// A separate file; the whole source is used for training.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum LossSection {
    Baseline { omega: f64, gamma: f64, tau: f64 },
    Lct(LctConfig),
}

impl Default for LossSection {
    fn default() -> Self {
        let p = VsHyperParams::cross_entropy();
        LossSection::Baseline {
            omega: p.omega,
            gamma: p.gamma,
            tau: p.tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub grid: SweepGrid,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub workers: usize,
}

/// Train and test sets built from a [`DatasetSection`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Checks every section; error messages name the offending key.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.dataset.validate()?;
        self.model.validate().context("model")?;
        self.train.validate().context("train")?;
        self.loss.validate(&self.model).context("loss")?;
        if let Some(s) = &self.sweep {
            self.sweep_spec(s).validate().context("sweep")?;
        }
        Ok(())
    }

    pub fn sweep_spec(&self, s: &SweepSection) -> SweepSpec {
        SweepSpec {
            grid: s.grid.clone(),
            model: self.model.clone(),
            train: self.train.clone(),
            seeds: s.seeds.clone(),
            workers: s.workers,
        }
    }
}

impl LossSection {
    pub fn validate(&self, model: &ModelConfig) -> anyhow::Result<()> {
        match self {
            LossSection::Baseline { omega, gamma, tau } => {
                VsHyperParams::new(*omega, *gamma, *tau)?;
            }
            LossSection::Lct(lct) => {
                lct.validate()?;
                if lct.lambda_dim() != model.lambda_dim {
                    bail!(
                        "conditions {} hyperparameter(s) but model.lambda_dim is {}",
                        lct.lambda_dim(),
                        model.lambda_dim
                    );
                }
            }
        }
        Ok(())
    }
}

impl DatasetSection {
    pub fn validate(&self) -> anyhow::Result<()> {
        match &self.source {
            DataSource::Synthetic {
                n0,
                n1,
                dim,
                separation,
            } => {
                if *n0 == 0 || *n1 == 0 || *dim == 0 {
                    bail!("dataset.source: n0, n1 and dim must be >= 1");
                }
                if !separation.is_finite() {
                    bail!("dataset.source.separation must be finite");
                }
            }
            DataSource::Csv { path } => {
                if !path.is_file() {
                    bail!("dataset.source.path: no such file {}", path.display());
                }
            }
        }
        match &self.test {
            TestSource::Fraction { fraction } if !(*fraction > 0.0 && *fraction < 1.0) => {
                bail!("dataset.test.fraction {fraction} not in (0, 1)")
            }
            TestSource::Csv { path } if !path.is_file() => {
                bail!("dataset.test.path: no such file {}", path.display())
            }
            _ => {}
        }
        if let Some(b) = self.target_beta {
            if !(b >= 1.0 && b.is_finite()) {
                bail!("dataset.target_beta {b} must be >= 1");
            }
        }
        Ok(())
    }

    pub fn prepare(&self) -> anyhow::Result<Prepared> {
        let source = match &self.source {
            DataSource::Synthetic {
                n0,
                n1,
                dim,
                separation,
            } => data::synth_gaussian(*n0, *n1, *dim, *separation, self.seed).context("dataset.source")?,
            DataSource::Csv { path } => Dataset::load_csv(path).context("dataset.source.path")?,
        };
        let (train, test) = match &self.test {
            TestSource::Counts { n0, n1 } => {
                data::split_counts(&source, *n0, *n1, self.seed).context("dataset.test")?
            }
            TestSource::Fraction { fraction } => data::split(&source, *fraction, self.seed).context("dataset.test")?,
            TestSource::Csv { path } => (source, Dataset::load_csv(path).context("dataset.test.path")?),
        };
        let train = match self.target_beta {
            Some(b) => data::subsample_minority(&train, b, self.seed).context("dataset.target_beta")?,
            None => train,
        };
        if train.dim() != test.dim() {
            bail!(
                "dataset: train has {} features but test has {}",
                train.dim(),
                test.dim()
            );
        }
        Ok(Prepared { train, test })
    }
}
