//! Hyperparameter sweeps, ROC aggregation, polynomial fits and paired t-tests.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dist::{LambdaPrior, LinearDistribution};
use crate::error::{Error, Result};
use crate::loss::VsHyperParams;
use crate::metrics::{roc_at_fpr_grid, RocCurve};
use crate::nn::ModelConfig;
use crate::special::student_t_two_sided_p;
use crate::train::{
    evaluate, evaluate_baseline, init_model, train_baseline, train_lct, LctConfig, RunMetrics, TrainConfig,
};

/// Hyperparameter grid of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepGrid {
    /// Full product `Ω × γ × τ`, one fixed loss per run.
    Baseline {
        omegas: Vec<f64>,
        gammas: Vec<f64>,
        taus: Vec<f64>,
    },
    /// `λ = τ` on `[a, b]`; product `h_b × Ω`, constant `γ`.
    Lct {
        a: f64,
        b: f64,
        h_bs: Vec<f64>,
        omegas: Vec<f64>,
        gamma: f64,
        eval_tau: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub grid: SweepGrid,
    pub model: ModelConfig,
    /// Shared schedule; the seed field is replaced by each run's seed.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Parallel runs; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
}

/// One run of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub omega: f64,
    pub gamma: f64,
    /// Constant τ for baseline runs, evaluation τ for conditional runs.
    pub tau: f64,
    /// Density height at `b` for conditional runs.
    pub h_b: Option<f64>,
    pub seed: u64,
}

impl RunPoint {
    /// File-name-safe identifier, unique within a sweep.
    pub fn key(&self) -> String {
        let mut key = format!("o{}_g{}_t{}", self.omega, self.gamma, self.tau);
        if let Some(h) = self.h_b {
            key.push_str(&format!("_h{h}"));
        }
        key.push_str(&format!("_s{}", self.seed));
        key
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub key: String,
    pub point: RunPoint,
    pub roc: Option<RocCurve>,
    pub metrics: Option<RunMetrics>,
    /// Failure message; the other result fields are empty when set.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<RunRecord>,
}

impl SweepResult {
    pub fn successful(&self) -> impl Iterator<Item = (&RunRecord, &RunMetrics)> {
        self.records.iter().filter_map(|r| r.metrics.as_ref().map(|m| (r, m)))
    }

    pub fn aucs(&self) -> Vec<f64> {
        self.successful().map(|(_, m)| m.auc).collect()
    }

    pub fn curves(&self) -> Vec<&RocCurve> {
        self.records.iter().filter_map(|r| r.roc.as_ref()).collect()
    }

    /// One row per run: `key,omega,gamma,tau,h_b,seed,auc,accuracy,tpr,fpr,error`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "key", "omega", "gamma", "tau", "h_b", "seed", "auc", "accuracy", "tpr", "fpr", "error",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let p = &r.point;
            let m = r.metrics.as_ref();
            w.write_record([
                r.key.clone(),
                p.omega.to_string(),
                p.gamma.to_string(),
                p.tau.to_string(),
                opt(p.h_b),
                p.seed.to_string(),
                opt(m.map(|m| m.auc)),
                opt(m.map(|m| m.accuracy)),
                opt(m.map(|m| m.tpr)),
                opt(m.map(|m| m.fpr)),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

fn check_grid(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::domain(format!("sweep grid {name} is empty")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!("sweep grid {name} has a non-finite value")));
    }
    Ok(())
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::domain("sweep needs at least one seed"));
        }
        match &self.grid {
            SweepGrid::Baseline { omegas, gammas, taus } => {
                check_grid("omegas", omegas)?;
                check_grid("gammas", gammas)?;
                check_grid("taus", taus)?;
            }
            SweepGrid::Lct { h_bs, omegas, .. } => {
                check_grid("h_bs", h_bs)?;
                check_grid("omegas", omegas)?;
                if self.model.lambda_dim != 1 {
                    return Err(Error::domain("a tau-conditioned sweep needs lambda_dim = 1"));
                }
            }
        }
        for p in self.points() {
            self.lct_config(&p).transpose()?;
            VsHyperParams::new(p.omega, p.gamma, p.tau)?;
        }
        Ok(())
    }

    /// Every `(configuration, seed)` pair in a fixed order.
    pub fn points(&self) -> Vec<RunPoint> {
        let mut out = Vec::new();
        match &self.grid {
            SweepGrid::Baseline { omegas, gammas, taus } => {
                for &omega in omegas {
                    for &gamma in gammas {
                        for &tau in taus {
                            for &seed in &self.seeds {
                                out.push(RunPoint {
                                    omega,
                                    gamma,
                                    tau,
                                    h_b: None,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
            SweepGrid::Lct {
                h_bs,
                omegas,
                gamma,
                eval_tau,
                ..
            } => {
                for &h_b in h_bs {
                    for &omega in omegas {
                        for &seed in &self.seeds {
                            out.push(RunPoint {
                                omega,
                                gamma: *gamma,
                                tau: *eval_tau,
                                h_b: Some(h_b),
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    fn lct_config(&self, p: &RunPoint) -> Option<Result<LctConfig>> {
        let SweepGrid::Lct { a, b, .. } = &self.grid else {
            return None;
        };
        let h_b = p.h_b?;
        Some(LinearDistribution::new(*a, *b, h_b).and_then(|d| {
            let lct = LctConfig::tau_only(p.omega, p.gamma, LambdaPrior::Linear(d), p.tau);
            lct.validate()?;
            Ok(lct)
        }))
    }

    /// Trains and evaluates one run. Failures are recorded, not returned.
    pub fn run_point(&self, p: &RunPoint, train: &Dataset, test: &Dataset) -> RunRecord {
        let outcome = (|| -> Result<(RocCurve, RunMetrics)> {
            let mut cfg = self.train.clone();
            cfg.seed = p.seed;
            let mut model = init_model(self.model.clone(), p.seed)?;
            let scores = match self.lct_config(p) {
                None => {
                    train_baseline(&mut model, train, VsHyperParams::new(p.omega, p.gamma, p.tau)?, &cfg)?;
                    evaluate_baseline(&model, test)?
                }
                Some(lct) => {
                    let lct = lct?;
                    train_lct(&mut model, train, &lct, &cfg)?;
                    evaluate(&model, test, &lct.eval_lambda)?
                }
            };
            let roc = crate::metrics::roc_curve(&scores)?;
            Ok((roc, RunMetrics::from_scores(&scores)?))
        })();
        let key = p.key();
        match outcome {
            Ok((roc, metrics)) => RunRecord {
                key,
                point: *p,
                roc: Some(roc),
                metrics: Some(metrics),
                error: None,
            },
            Err(e) => RunRecord {
                key,
                point: *p,
                roc: None,
                metrics: None,
                error: Some(e.to_string()),
            },
        }
    }
}

fn manifest_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.json"))
}

fn load_record(path: &Path) -> Option<RunRecord> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str::<RunRecord>(&text)
        .ok()
        .filter(|r| r.error.is_none())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs every point of `spec` on up to `spec.workers` threads.
///
/// With `manifest_dir` set, each finished run is stored there as
/// `<key>.json` and runs whose manifest already exists without an error are
/// loaded instead of retrained.
pub fn run_sweep(
    spec: &SweepSpec,
    train: &Dataset,
    test: &Dataset,
    manifest_dir: Option<&Path>,
) -> Result<SweepResult> {
    spec.validate()?;
    if let Some(dir) = manifest_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let points = spec.points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::domain(format!("cannot start worker pool: {e}")))?;
    let records: Vec<Result<RunRecord>> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let path = manifest_dir.map(|d| manifest_path(d, &p.key()));
                if let Some(done) = path.as_deref().and_then(load_record) {
                    if done.point == *p {
                        return Ok(done);
                    }
                }
                let record = spec.run_point(p, train, test);
                if let Some(path) = &path {
                    let text = serde_json::to_vec_pretty(&record).map_err(|source| Error::Json {
                        path: path.clone(),
                        source,
                    })?;
                    write_atomic(path, &text)?;
                }
                Ok(record)
            })
            .collect()
    });
    Ok(SweepResult {
        records: records.into_iter().collect::<Result<_>>()?,
    })
}

/// Loads every `*.json` run record from a manifest directory, sorted by key.
pub fn load_sweep_dir(dir: &Path) -> Result<SweepResult> {
    let mut records = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let record: RunRecord = serde_json::from_str(&text).map_err(|source| Error::Json {
                path: path.clone(),
                source,
            })?;
            records.push(record);
        }
    }
    records.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(SweepResult { records })
}

/// 101 uniform points on `[0, 1]` plus ten log-spaced points per decade from `1e-3`.
pub fn default_fpr_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    grid.extend((0..20).map(|k| 10f64.powf(-3.0 + k as f64 / 10.0)));
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    grid
}

/// Pointwise TPR statistics over a set of ROC curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocAggregate {
    pub fpr: Vec<f64>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Sample standard deviation (`n − 1` denominator).
    pub std: Vec<f64>,
}

impl RocAggregate {
    /// Header `fpr,mean,min,max,std`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fpr", "mean", "min", "max", "std"])?;
        for i in 0..self.fpr.len() {
            w.write_record([self.fpr[i], self.mean[i], self.min[i], self.max[i], self.std[i]].map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

pub fn aggregate_roc(curves: &[&RocCurve], grid: &[f64]) -> Result<RocAggregate> {
    if curves.len() < 2 {
        return Err(Error::Insufficient(format!(
            "ROC aggregation needs at least 2 curves, got {}",
            curves.len()
        )));
    }
    let per_curve: Vec<Vec<f64>> = curves.iter().map(|c| roc_at_fpr_grid(c, grid)).collect();
    let n = curves.len() as f64;
    let mut agg = RocAggregate {
        fpr: grid.to_vec(),
        mean: Vec::with_capacity(grid.len()),
        min: Vec::with_capacity(grid.len()),
        max: Vec::with_capacity(grid.len()),
        std: Vec::with_capacity(grid.len()),
    };
    let mut column = Vec::with_capacity(curves.len());
    for g in 0..grid.len() {
        column.clear();
        column.extend(per_curve.iter().map(|c| c[g]));
        // summing in sorted order makes the result independent of curve order
        column.sort_by(f64::total_cmp);
        let (lo, hi) = (column[0], column[column.len() - 1]);
        // rounding in sum/n can step outside [lo, hi] or leave a constant column with spread
        let (mean, std) = if lo == hi {
            (lo, 0.0)
        } else {
            let mean = (column.iter().sum::<f64>() / n).clamp(lo, hi);
            let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, var.sqrt())
        };
        agg.mean.push(mean);
        agg.min.push(lo);
        agg.max.push(hi);
        agg.std.push(std);
    }
    Ok(agg)
}

/// Exponent vectors of all monomials of total degree `≤ degree` in `k`
/// variables: intercept first, then by degree, lexicographically within a degree.
pub fn monomials(k: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(k: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == k {
            if left == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            rec(k, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for d in 0..=degree {
        rec(k, d, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    /// Exponents of each term, aligned with `coefficients`.
    pub terms: Vec<Vec<u32>>,
    pub coefficients: Vec<f64>,
    pub r2: f64,
    pub ss_res: f64,
    pub ss_tot: f64,
    /// The target is constant (`SS_tot = 0`); `r2` is then reported as 1.
    pub constant_target: bool,
}

impl PolyFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .zip(&self.coefficients)
            .map(|(e, c)| c * monomial_value(e, x))
            .sum()
    }
}

fn monomial_value(exponents: &[u32], x: &[f64]) -> f64 {
    exponents.iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product()
}

/// Least-squares polynomial fit of `target` on the feature columns and its
/// in-sample R².
pub fn polyfit_r2(features: &[&[f64]], target: &[f64], degree: u32) -> Result<PolyFit> {
    if features.is_empty() {
        return Err(Error::domain("polyfit needs at least one feature column"));
    }
    let n = target.len();
    if let Some(c) = features.iter().find(|c| c.len() != n) {
        return Err(Error::Dimension {
            what: "feature column",
            expected: n,
            got: c.len(),
        });
    }
    if features
        .iter()
        .flat_map(|c| c.iter())
        .chain(target)
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("polyfit input".into()));
    }
    let terms = monomials(features.len(), degree);
    let p = terms.len();
    if n < p {
        return Err(Error::Insufficient(format!("{n} rows for {p} polynomial terms")));
    }
    let mut row = vec![0.0; features.len()];
    let design = DMatrix::from_fn(n, p, |i, j| {
        for (r, c) in row.iter_mut().zip(features) {
            *r = c[i];
        }
        monomial_value(&terms[j], &row)
    });
    let y = DVector::from_column_slice(target);

    let qr = design.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rank = r.diagonal().iter().filter(|v| v.abs() > scale * 1e-10).count();
    if rank < p {
        return Err(Error::RankDeficient { rank, columns: p });
    }
    let qty = qr.q().transpose() * &y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { rank, columns: p })?;

    let resid = &y - &design * &coef;
    let ss_res = resid.norm_squared();
    let mean = target.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = target.iter().map(|v| (v - mean).powi(2)).sum();
    let constant_target = ss_tot == 0.0;
    Ok(PolyFit {
        terms,
        coefficients: coef.iter().copied().collect(),
        r2: if constant_target { 1.0 } else { 1.0 - ss_res / ss_tot },
        ss_res,
        ss_tot,
        constant_target,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub n: usize,
    /// Mean of `a − b`.
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p_value: f64,
    pub a_greater: usize,
    pub b_greater: usize,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            what: "paired sample",
            expected: a.len(),
            got: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Insufficient(format!("paired t-test needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("paired sample".into()));
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Err(Error::ZeroVariance(format!(
            "all {n} paired differences equal {mean}; t is undefined"
        )));
    }
    let sd = var.sqrt();
    let t = mean / (sd / nf.sqrt());
    let df = nf - 1.0;
    Ok(PairedTTest {
        n,
        mean_diff: mean,
        sd_diff: sd,
        t,
        df,
        p_value: student_t_two_sided_p(t, df),
        a_greater: d.iter().filter(|&&v| v > 0.0).count(),
        b_greater: d.iter().filter(|&&v| v < 0.0).count(),
    })
}
