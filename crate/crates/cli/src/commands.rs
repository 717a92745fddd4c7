use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use lct_core::analysis::{aggregate_roc, default_fpr_grid, load_sweep_dir, paired_t_test, polyfit_r2, run_sweep};
use lct_core::analysis::{PairedTTest, PolyFit, RunRecord, SweepResult};
use lct_core::dist::LinearDistribution;
use lct_core::loss::{
    break_even_line, break_even_softmax_score, linspace, loss_difference_grid, omega_softmax_intersection,
    VsHyperParams,
};
use lct_core::metrics::{roc_at_fpr_grid, roc_curve, LabeledScores};
use lct_core::seed::{self, Stream};
use lct_core::train::{
    evaluate, evaluate_baseline, init_model, train_baseline, train_lct, RunManifest, RunMethod, RunMetrics,
};
use serde::Serialize;

use crate::config::{DataSource, ExperimentConfig, LossSection, Prepared};
use crate::output::{self, Existing, Plan, Staging};
use crate::{
    AnalyzeArgs, DataOverrides, DistCheckArgs, Failure, GenDataArgs, LossGeometryArgs, PairBy, ResultExt, RocArgs,
    SweepArgs, TrainArgs, TrainOverrides,
};

type CmdResult = Result<(), Failure>;

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("serializable summary"));
}

fn skipped(dest: &Path) -> CmdResult {
    eprintln!("{} exists, skipping", dest.display());
    Ok(())
}

fn apply_data(cfg: &mut ExperimentConfig, o: &DataOverrides) -> anyhow::Result<()> {
    let d = &mut cfg.dataset;
    if let Some(s) = o.data_seed {
        d.seed = s;
    }
    if let Some(b) = o.target_beta {
        d.target_beta = Some(b);
    }
    let synthetic = [o.n0.is_some(), o.n1.is_some(), o.dim.is_some(), o.separation.is_some()];
    match &mut d.source {
        DataSource::Synthetic {
            n0,
            n1,
            dim,
            separation,
        } => {
            *n0 = o.n0.unwrap_or(*n0);
            *n1 = o.n1.unwrap_or(*n1);
            *dim = o.dim.unwrap_or(*dim);
            *separation = o.separation.unwrap_or(*separation);
        }
        DataSource::Csv { .. } if synthetic.contains(&true) => {
            bail!("--n0/--n1/--dim/--separation need dataset.source.kind = synthetic")
        }
        DataSource::Csv { .. } => {}
    }
    if let DataSource::Synthetic { dim, .. } = d.source {
        cfg.model.input_dim = dim;
    }
    Ok(())
}

fn apply_train(cfg: &mut ExperimentConfig, o: &TrainOverrides) {
    let t = &mut cfg.train;
    if let Some(s) = o.seed {
        t.seed = s;
    }
    if let Some(e) = o.epochs {
        // milestones keep their relative position in the schedule
        for m in &mut t.schedule.milestones {
            m.epoch = (m.epoch * e).checked_div(t.epochs).unwrap_or(m.epoch);
        }
        t.epochs = e;
    }
    if let Some(lr) = o.lr {
        t.schedule.initial = lr;
    }
    if let Some(b) = o.batch_size {
        t.batch_size = b;
    }
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, Failure> {
    let data = cfg.dataset.prepare().usage()?;
    if data.train.dim() != cfg.model.input_dim {
        return Err(Failure::Usage(anyhow!(
            "model.input_dim is {} but the dataset has {} features",
            cfg.model.input_dim,
            data.train.dim()
        )));
    }
    Ok(data)
}

pub fn gen_data(args: &GenDataArgs, existing: Existing) -> CmdResult {
    let mut cfg = ExperimentConfig::load_or_default(args.common.config.as_deref()).usage()?;
    apply_data(&mut cfg, &args.data).usage()?;
    cfg.dataset.validate().usage()?;
    let dest = output::resolve(args.common.out.as_deref(), cfg.output.as_deref(), "gen-data");
    if output::plan(&dest, existing).usage()? == Plan::Skip {
        return skipped(&dest);
    }
    let data = cfg.dataset.prepare().usage()?;
    let staging = Staging::new(&dest).runtime()?;
    data.train.save_csv(&staging.path("train.csv")).runtime()?;
    data.test.save_csv(&staging.path("test.csv")).runtime()?;
    output::write_json(&staging.path("dataset.json"), &cfg.dataset).runtime()?;
    staging.commit().runtime()?;
    print_json(&serde_json::json!({
        "train": {"n0": data.train.n0(), "n1": data.train.n1()},
        "test": {"n0": data.test.n0(), "n1": data.test.n1()},
        "output": dest,
    }));
    Ok(())
}

pub fn train(args: &TrainArgs, existing: Existing) -> CmdResult {
    let mut cfg = ExperimentConfig::load_or_default(args.common.config.as_deref()).usage()?;
    apply_data(&mut cfg, &args.data).usage()?;
    apply_train(&mut cfg, &args.train);
    match &mut cfg.loss {
        LossSection::Baseline { omega, gamma, tau } => {
            if args.eval_lambda.is_some() {
                return Err(Failure::Usage(anyhow!("--eval-lambda needs loss.method = lct")));
            }
            *omega = args.omega.unwrap_or(*omega);
            *gamma = args.gamma.unwrap_or(*gamma);
            *tau = args.tau.unwrap_or(*tau);
        }
        LossSection::Lct(lct) => {
            if args.omega.is_some() || args.gamma.is_some() || args.tau.is_some() {
                return Err(Failure::Usage(anyhow!(
                    "--omega/--gamma/--tau need loss.method = baseline"
                )));
            }
            if let Some(l) = &args.eval_lambda {
                lct.eval_lambda = l.clone();
            }
        }
    }
    cfg.validate().usage()?;
    let dest = output::resolve(args.common.out.as_deref(), cfg.output.as_deref(), "train");
    if output::plan(&dest, existing).usage()? == Plan::Skip {
        return skipped(&dest);
    }
    let data = prepare(&cfg)?;

    let seed = cfg.train.seed;
    let mut model = init_model(cfg.model.clone(), seed).runtime()?;
    let (method, report, scores) = match &cfg.loss {
        LossSection::Baseline { omega, gamma, tau } => {
            let params = VsHyperParams::new(*omega, *gamma, *tau).usage()?;
            let report = train_baseline(&mut model, &data.train, params, &cfg.train).runtime()?;
            let scores = evaluate_baseline(&model, &data.test).runtime()?;
            (RunMethod::Baseline { params }, report, scores)
        }
        LossSection::Lct(lct) => {
            let report = train_lct(&mut model, &data.train, lct, &cfg.train).runtime()?;
            let scores = evaluate(&model, &data.test, &lct.eval_lambda).runtime()?;
            let role = lct.role().to_string();
            (RunMethod::Lct { lct: lct.clone(), role }, report, scores)
        }
    };
    let metrics = RunMetrics::from_scores(&scores).ok();

    let staging = Staging::new(&dest).runtime()?;
    model
        .to_checkpoint()
        .save_json(&staging.path("checkpoint.json"))
        .runtime()?;
    scores
        .write_csv(File::create(staging.path("scores.csv")).runtime()?)
        .runtime()?;
    let manifest = RunManifest {
        method,
        seed,
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        report,
        metrics,
        checkpoint: Some("checkpoint.json".into()),
    };
    manifest.save_json(&staging.path("manifest.json")).runtime()?;
    output::write_json(&staging.path("config.json"), &cfg).runtime()?;
    staging.commit().runtime()?;
    print_json(&serde_json::json!({"metrics": metrics, "output": dest}));
    Ok(())
}

pub fn sweep(args: &SweepArgs, existing: Existing) -> CmdResult {
    let mut cfg = ExperimentConfig::load_or_default(args.common.config.as_deref()).usage()?;
    apply_data(&mut cfg, &args.data).usage()?;
    apply_train(&mut cfg, &args.train);
    let Some(section) = cfg.sweep.as_mut() else {
        return Err(Failure::Usage(anyhow!("config has no sweep section")));
    };
    if let Some(s) = &args.seeds {
        section.seeds = s.clone();
    }
    if let Some(w) = args.workers {
        section.workers = w;
    }
    cfg.validate().usage()?;
    let dest = output::resolve(args.common.out.as_deref(), cfg.output.as_deref(), "sweep");
    match (dest.exists(), existing) {
        (true, Existing::Fail) => {
            return Err(Failure::Usage(anyhow!(
                "{} already exists; pass --existing skip to resume or --existing overwrite",
                dest.display()
            )))
        }
        (true, Existing::Overwrite) => fs::remove_dir_all(&dest)
            .with_context(|| format!("cannot remove {}", dest.display()))
            .runtime()?,
        _ => {}
    }
    let data = prepare(&cfg)?;
    let spec = cfg.sweep_spec(cfg.sweep.as_ref().expect("checked above"));
    fs::create_dir_all(&dest)
        .with_context(|| format!("cannot create {}", dest.display()))
        .runtime()?;
    output::write_json(&dest.join("config.json"), &cfg).runtime()?;
    let result = run_sweep(&spec, &data.train, &data.test, Some(&dest.join("runs"))).runtime()?;
    let mut csv = Vec::new();
    result.write_csv(&mut csv).runtime()?;
    output::write_atomic(&dest.join("sweep.csv"), &csv).runtime()?;
    let failed = result.records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!(
            "warning: {failed} of {} runs failed; see sweep.csv",
            result.records.len()
        );
    }
    print_json(&serde_json::json!({
        "runs": result.records.len(),
        "failed": failed,
        "auc": Stats::of(&result.aucs()),
        "output": dest,
    }));
    Ok(())
}

pub fn roc(args: &RocArgs, existing: Existing) -> CmdResult {
    let file = File::open(&args.scores)
        .with_context(|| format!("cannot open {}", args.scores.display()))
        .usage()?;
    let scores = LabeledScores::read_csv(file)
        .with_context(|| format!("reading {}", args.scores.display()))
        .usage()?;
    let curve = roc_curve(&scores)
        .with_context(|| format!("{}", args.scores.display()))
        .usage()?;
    let dest = args
        .out
        .clone()
        .unwrap_or_else(|| output::resolve(None, None, "roc").join("roc.csv"));
    if output::plan(&dest, existing).usage()? == Plan::Skip {
        return skipped(&dest);
    }
    let mut buf = Vec::new();
    if args.grid {
        let grid = default_fpr_grid();
        buf.extend_from_slice(b"fpr,tpr\n");
        for (f, t) in grid.iter().zip(roc_at_fpr_grid(&curve, &grid)) {
            buf.extend_from_slice(format!("{f},{t}\n").as_bytes());
        }
    } else {
        curve.write_csv(&mut buf).runtime()?;
    }
    output::write_atomic(&dest, &buf).runtime()?;
    print_json(&serde_json::json!({"auc": curve.auc, "output": dest}));
    Ok(())
}

#[derive(Debug, Serialize)]
struct Stats {
    n: usize,
    mean: f64,
    /// Sample standard deviation; absent for a single value.
    std: Option<f64>,
    min: f64,
    max: f64,
}

impl Stats {
    fn of(v: &[f64]) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Self {
            n: v.len(),
            mean,
            std,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Serialize)]
struct FitReport {
    target: &'static str,
    features: Vec<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<PolyFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct TTestReport {
    pair_by: &'static str,
    pairs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<PairedTTest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct AnalysisSummary {
    runs: usize,
    failed: usize,
    auc: Option<Stats>,
    accuracy: Option<Stats>,
    tpr: Option<Stats>,
    /// Why `roc_aggregate.csv` was not written, if it was not.
    #[serde(skip_serializing_if = "Option::is_none")]
    roc_aggregate_error: Option<String>,
    fits: Vec<FitReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_test: Option<TTestReport>,
}

fn load_sweep(dir: &Path) -> anyhow::Result<SweepResult> {
    let runs = dir.join("runs");
    let dir = if runs.is_dir() { runs } else { dir.to_path_buf() };
    let result = load_sweep_dir(&dir).with_context(|| format!("loading sweep {}", dir.display()))?;
    if result.records.is_empty() {
        bail!("no run manifests in {}", dir.display());
    }
    Ok(result)
}

type Column = (&'static str, fn(&RunRecord) -> Option<f64>);

fn fits(result: &SweepResult) -> Vec<FitReport> {
    let ok: Vec<&RunRecord> = result.records.iter().filter(|r| r.metrics.is_some()).collect();
    let conditional = ok.iter().any(|r| r.point.h_b.is_some());
    let omega: Column = ("omega", |r| Some(r.point.omega));
    let features: Vec<Column> = if conditional {
        vec![("h_b", |r| r.point.h_b), omega]
    } else {
        vec![
            omega,
            ("gamma", |r| Some(r.point.gamma)),
            ("tau", |r| Some(r.point.tau)),
        ]
    };
    let targets: [Column; 3] = [
        ("auc", |r| r.metrics.map(|m| m.auc)),
        ("accuracy", |r| r.metrics.map(|m| m.accuracy)),
        ("tpr", |r| r.metrics.map(|m| m.tpr)),
    ];
    let mut subsets: Vec<Vec<usize>> = (0..features.len()).map(|i| vec![i]).collect();
    subsets.push((0..features.len()).collect());
    let mut out = Vec::new();
    for (target, get) in targets {
        let y: Vec<f64> = ok.iter().filter_map(|r| get(r)).collect();
        for subset in &subsets {
            let cols: Vec<Vec<f64>> = subset
                .iter()
                .map(|&i| ok.iter().map(|r| features[i].1(r).unwrap_or(f64::NAN)).collect())
                .collect();
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            let (fit, error) = match polyfit_r2(&refs, &y, 2) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            out.push(FitReport {
                target,
                features: subset.iter().map(|&i| features[i].0).collect(),
                fit,
                error,
            });
        }
    }
    out
}

fn paired_aucs(a: &SweepResult, b: &SweepResult, by: PairBy) -> (Vec<String>, Vec<f64>, Vec<f64>) {
    let group = |r: &SweepResult| -> BTreeMap<String, Vec<f64>> {
        let mut m: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (rec, metrics) in r.successful() {
            let k = match by {
                PairBy::Key => rec.key.clone(),
                PairBy::Seed => format!("s{}", rec.point.seed),
            };
            m.entry(k).or_default().push(metrics.auc);
        }
        m
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ga, gb) = (group(a), group(b));
    let mut keys = Vec::new();
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    for (k, va) in &ga {
        if let Some(vb) = gb.get(k) {
            keys.push(k.clone());
            xa.push(mean(va));
            xb.push(mean(vb));
        }
    }
    (keys, xa, xb)
}

pub fn analyze(args: &AnalyzeArgs, existing: Existing) -> CmdResult {
    let result = load_sweep(&args.sweep).usage()?;
    let other = args.compare.as_deref().map(load_sweep).transpose().usage()?;
    let dest = output::resolve(args.out.as_deref(), None, "analyze");
    if output::plan(&dest, existing).usage()? == Plan::Skip {
        return skipped(&dest);
    }
    let staging = Staging::new(&dest).runtime()?;

    let column = |f: fn(&RunMetrics) -> f64| result.successful().map(|(_, m)| f(m)).collect::<Vec<_>>();
    let curves = result.curves();
    let roc_aggregate_error = match aggregate_roc(&curves, &default_fpr_grid()) {
        Ok(agg) => {
            agg.write_csv(File::create(staging.path("roc_aggregate.csv")).runtime()?)
                .runtime()?;
            None
        }
        Err(e) => Some(e.to_string()),
    };
    let t_test = match &other {
        None => None,
        Some(other) => {
            let (pairs, a, b) = paired_aucs(&result, other, args.pair_by);
            if pairs.len() < 2 {
                return Err(Failure::Usage(anyhow!(
                    "--compare: only {} paired run(s) between {} and {}",
                    pairs.len(),
                    args.sweep.display(),
                    other_name(args)
                )));
            }
            let (result, error) = match paired_t_test(&a, &b) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Some(TTestReport {
                pair_by: match args.pair_by {
                    PairBy::Key => "key",
                    PairBy::Seed => "seed",
                },
                pairs,
                result,
                error,
            })
        }
    };
    let summary = AnalysisSummary {
        runs: result.records.len(),
        failed: result.records.iter().filter(|r| r.error.is_some()).count(),
        auc: Stats::of(&column(|m| m.auc)),
        accuracy: Stats::of(&column(|m| m.accuracy)),
        tpr: Stats::of(&column(|m| m.tpr)),
        roc_aggregate_error,
        fits: fits(&result),
        t_test,
    };
    let mut csv = Vec::new();
    result.write_csv(&mut csv).runtime()?;
    fs::write(staging.path("sweep.csv"), csv).runtime()?;
    output::write_json(&staging.path("summary.json"), &summary).runtime()?;
    staging.commit().runtime()?;
    print_json(&serde_json::json!({
        "runs": summary.runs,
        "auc": summary.auc,
        "t_test": summary.t_test.as_ref().and_then(|t| t.result),
        "output": dest,
    }));
    Ok(())
}

fn other_name(args: &AnalyzeArgs) -> String {
    args.compare
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

pub fn loss_geometry(args: &LossGeometryArgs, existing: Existing) -> CmdResult {
    let mut combos = Vec::new();
    for &omega in &args.omega {
        for &gamma in &args.gamma {
            for &tau in &args.tau {
                let p = VsHyperParams::new(omega, gamma, tau)
                    .with_context(|| format!("--omega {omega} --gamma {gamma} --tau {tau}"))
                    .usage()?;
                break_even_line(p, args.beta).context("--beta").usage()?;
                combos.push(p);
            }
        }
    }
    if combos.is_empty() {
        return Err(Failure::Usage(anyhow!("no (omega, gamma, tau) combination given")));
    }
    let dest = output::resolve(args.out.as_deref(), None, "loss-geometry");
    if output::plan(&dest, existing).usage()? == Plan::Skip {
        return skipped(&dest);
    }
    let staging = Staging::new(&dest).runtime()?;
    let mut table = String::from(
        "omega,gamma,tau,beta,alpha_omega,slope,intercept,omega_softmax_intersection,balanced_softmax_score,grid\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in &combos {
        let name = grid_file_name(p);
        let grid = loss_difference_grid(*p, args.beta, args.lo, args.hi, args.steps)
            .context("grid range")
            .usage()?;
        grid.write_csv(File::create(staging.path(&name)).runtime()?).runtime()?;
        let line = break_even_line(*p, args.beta).runtime()?;
        let intersection = omega_softmax_intersection(p.omega).ok();
        // the closed-form score only describes the unweighted, unscaled loss
        let balanced = (p.omega == 0.5 && p.gamma == 0.0)
            .then(|| break_even_softmax_score(args.beta, p.tau).ok())
            .flatten();
        writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{}",
            p.omega,
            p.gamma,
            p.tau,
            args.beta,
            line.alpha_omega,
            line.slope,
            line.intercept,
            opt(intersection),
            opt(balanced),
            name
        )
        .expect("writing to a String");
    }
    fs::write(staging.path("break_even.csv"), table).runtime()?;
    staging.commit().runtime()?;
    print_json(&serde_json::json!({"grids": combos.len(), "output": dest}));
    Ok(())
}

pub fn grid_file_name(p: &VsHyperParams) -> String {
    format!("grid_o{}_g{}_t{}.csv", p.omega, p.gamma, p.tau)
}

#[derive(Debug, Serialize)]
struct DistSummary {
    a: f64,
    b: f64,
    h_a: f64,
    h_b: f64,
    draws: usize,
    bins: usize,
    seed: u64,
    /// Largest |count − expected| / σ over the histogram bins.
    max_abs_z: f64,
    within_3_sigma: bool,
    /// Sup distance between the empirical and analytic CDF.
    ks_distance: f64,
}

pub fn dist_check(args: &DistCheckArgs, existing: Existing) -> CmdResult {
    let dist = LinearDistribution::new(args.a, args.b, args.h_b)
        .context("--a/--b/--h-b")
        .usage()?;
    if args.draws == 0 || args.bins == 0 || args.points < 2 {
        return Err(Failure::Usage(anyhow!(
            "--draws and --bins must be >= 1, --points >= 2"
        )));
    }
    let dest = output::resolve(args.out.as_deref(), None, "dist-check");
    if output::plan(&dest, existing).usage()? == Plan::Skip {
        return skipped(&dest);
    }
    let staging = Staging::new(&dest).runtime()?;

    let mut analytic = String::from("x,pdf,cdf\n");
    for x in linspace(args.a, args.b, args.points) {
        writeln!(analytic, "{x},{},{}", dist.pdf(x), dist.cdf(x)).expect("writing to a String");
    }
    fs::write(staging.path("analytic.csv"), analytic).runtime()?;

    let mut rng = seed::rng(args.seed, Stream::Lambda);
    let mut draws: Vec<f64> = (0..args.draws).map(|_| dist.sample(&mut rng)).collect();
    let edges = linspace(args.a, args.b, args.bins + 1);
    let width = (args.b - args.a) / args.bins as f64;
    let mut counts = vec![0u64; args.bins];
    for &x in &draws {
        counts[(((x - args.a) / width) as usize).min(args.bins - 1)] += 1;
    }
    let n = args.draws as f64;
    let mut hist = String::from("lo,hi,count,expected,sigma,z\n");
    let mut max_abs_z = 0.0f64;
    for (i, &c) in counts.iter().enumerate() {
        let (lo, hi) = (edges[i], edges[i + 1]);
        let p = dist.cdf(hi) - dist.cdf(lo);
        let expected = n * p;
        let sigma = (n * p * (1.0 - p)).sqrt();
        let z = if sigma > 0.0 {
            (c as f64 - expected) / sigma
        } else if c as f64 == expected {
            0.0
        } else {
            f64::INFINITY
        };
        max_abs_z = max_abs_z.max(z.abs());
        writeln!(hist, "{lo},{hi},{c},{expected},{sigma},{z}").expect("writing to a String");
    }
    fs::write(staging.path("histogram.csv"), hist).runtime()?;

    draws.sort_by(f64::total_cmp);
    let ks_distance = draws.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
        let f = dist.cdf(x);
        acc.max((f - i as f64 / n).abs()).max((f - (i + 1) as f64 / n).abs())
    });
    let summary = DistSummary {
        a: dist.a(),
        b: dist.b(),
        h_a: dist.h_a(),
        h_b: dist.h_b(),
        draws: args.draws,
        bins: args.bins,
        seed: args.seed,
        max_abs_z,
        within_3_sigma: max_abs_z <= 3.0,
        ks_distance,
    };
    output::write_json(&staging.path("summary.json"), &summary).runtime()?;
    staging.commit().runtime()?;
    print_json(&summary);
    Ok(())
}
