use lct_core::data::{synth_gaussian, Dataset};
use lct_core::dist::{LambdaPrior, LinearDistribution};
use lct_core::error::Error;
use lct_core::loss::VsHyperParams;
use lct_core::metrics::{confusion, roc_curve};
use lct_core::nn::ModelConfig;
use lct_core::train::*;

fn small_config(lambda_dim: usize) -> ModelConfig {
    ModelConfig {
        input_dim: 2,
        hidden: vec![16, 16],
        lambda_dim,
        film_hidden: 8,
        ..ModelConfig::default()
    }
}

fn imbalanced() -> Dataset {
    synth_gaussian(300, 30, 2, 2.5, 1).unwrap()
}

#[test]
fn separable_data_is_learned() {
    let data = synth_gaussian(200, 200, 2, 6.0, 3).unwrap();
    let mut model = init_model(small_config(1), 3).unwrap();
    train_baseline(
        &mut model,
        &data,
        VsHyperParams::cross_entropy(),
        &TrainConfig::new(30, 0.1, 3),
    )
    .unwrap();
    let acc = confusion(&evaluate_baseline(&model, &data).unwrap(), 0.5)
        .overall_accuracy()
        .unwrap();
    assert!(acc > 0.95, "train accuracy {acc}");
}

#[test]
fn same_seed_gives_identical_parameters() {
    let data = imbalanced();
    let p = VsHyperParams::new(0.9, 0.2, 1.0).unwrap();
    let run = |seed| {
        let mut m = init_model(small_config(1), seed).unwrap();
        train_baseline(&mut m, &data, p, &TrainConfig::new(5, 0.1, seed)).unwrap();
        m
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4), run(5));
}

#[test]
fn point_mass_prior_reproduces_fixed_training() {
    let data = imbalanced();
    let tau0 = 1.5;
    let cfg = TrainConfig::new(4, 0.1, 8);
    let mut fixed = init_model(small_config(1), 8).unwrap();
    train_fixed(
        &mut fixed,
        &data,
        VsHyperParams::new(0.5, 0.0, tau0).unwrap(),
        &[tau0],
        &cfg,
        &mut (),
    )
    .unwrap();
    let mut lct = init_model(small_config(1), 8).unwrap();
    let config = LctConfig::tau_only(0.5, 0.0, LambdaPrior::PointMass(tau0), tau0);
    train_lct(&mut lct, &data, &config, &cfg).unwrap();
    assert_eq!(fixed, lct);
}

#[test]
fn one_draw_per_batch_and_lambda_reaches_both_uses() {
    let data = imbalanced();
    let prior = LambdaPrior::Linear(LinearDistribution::new(0.0, 3.0, 0.0).unwrap());
    let lct = LctConfig::tau_only(0.9, 0.0, prior, 1.0);
    let mut model = init_model(small_config(1), 2).unwrap();
    let mut cfg = TrainConfig::new(3, 0.05, 2);
    cfg.batch_size = 50;
    let mut seen = Vec::new();
    let mut record = |e: &BatchEvent<'_>| seen.push((e.conditioning.to_vec(), e.params));
    let report = train_lct_observed(&mut model, &data, &lct, &cfg, &mut record).unwrap();
    // 330 samples in batches of 50
    assert_eq!(report.batches, 3 * 7);
    assert_eq!(report.lambda_draws, report.batches);
    assert_eq!(seen.len(), report.batches);
    for (lambda, params) in &seen {
        assert_eq!(lambda.len(), 1);
        assert_eq!(lambda[0], params.tau);
        assert_eq!((params.omega, params.gamma), (0.9, 0.0));
        assert!((0.0..=3.0).contains(&lambda[0]));
    }
    let distinct: std::collections::BTreeSet<u64> = seen.iter().map(|(l, _)| l[0].to_bits()).collect();
    assert_eq!(distinct.len(), seen.len());
}

#[test]
fn learning_rate_follows_milestones() {
    let data = imbalanced();
    let mut model = init_model(small_config(1), 1).unwrap();
    let cfg = TrainConfig::step_decay(10, 0.2, 1);
    let mut rates = Vec::new();
    let mut record = |e: &BatchEvent<'_>| rates.push((e.epoch, e.learning_rate));
    train_fixed(
        &mut model,
        &data,
        VsHyperParams::cross_entropy(),
        &[0.0],
        &cfg,
        &mut record,
    )
    .unwrap();
    for (epoch, rate) in rates {
        assert_eq!(rate, cfg.schedule.rate_at(epoch));
        let want = match epoch {
            0..=7 => 0.2,
            8 => 0.2 * 0.1,
            _ => 0.2 * 0.1 * 0.1,
        };
        assert_eq!(rate, want, "epoch {epoch}");
    }
}

#[test]
fn three_way_conditioning_trains() {
    let data = imbalanced();
    let unit = LambdaPrior::Linear(LinearDistribution::new(0.5, 0.99, 2.0 / 0.49).unwrap());
    let lct = LctConfig {
        omega: HyperSetting::Conditioned(unit),
        gamma: HyperSetting::Conditioned(LambdaPrior::Linear(LinearDistribution::new(0.0, 0.4, 2.5).unwrap())),
        tau: HyperSetting::Conditioned(LambdaPrior::Linear(LinearDistribution::new(0.0, 3.0, 0.0).unwrap())),
        eval_lambda: vec![0.9, 0.2, 1.0],
    };
    assert_eq!(lct.role().to_string(), "omega+gamma+tau");
    let mut model = init_model(small_config(3), 6).unwrap();
    let report = train_lct(&mut model, &data, &lct, &TrainConfig::new(3, 0.05, 6)).unwrap();
    assert_eq!(report.lambda_draws, report.batches);
    let scores = evaluate(&model, &data, &lct.eval_lambda).unwrap();
    assert!(scores.scores().iter().all(|s| s.is_finite()));
}

#[test]
fn lct_smoke_run_beats_chance() {
    let full = synth_gaussian(1000, 300, 2, 2.5, 12).unwrap();
    let (train, test) = lct_core::data::split_counts(&full, 200, 200, 12).unwrap();
    let train = lct_core::data::subsample_minority(&train, 100.0, 12).unwrap();
    let prior = LambdaPrior::Linear(LinearDistribution::new(0.0, 3.0, 0.0).unwrap());
    let lct = LctConfig::tau_only(0.5, 0.0, prior, 1.0);
    let mut model = init_model(small_config(1), 12).unwrap();
    train_lct(&mut model, &train, &lct, &TrainConfig::new(20, 0.1, 12)).unwrap();
    let auc = roc_curve(&evaluate(&model, &test, &[1.0]).unwrap()).unwrap().auc;
    assert!(auc > 0.5, "auc {auc}");
}

#[test]
fn evaluation_is_repeatable() {
    let data = imbalanced();
    let model = init_model(small_config(1), 3).unwrap();
    assert_eq!(
        evaluate(&model, &data, &[2.0]).unwrap(),
        evaluate(&model, &data, &[2.0]).unwrap()
    );
    assert!(evaluate(&model, &data, &[2.0, 1.0]).is_err());
}

#[test]
fn non_finite_loss_names_the_batch() {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..20 {
        features.extend([f64::MAX, f64::MAX]);
        labels.push(u8::from(i % 4 == 0));
    }
    let data = Dataset::new(2, features, labels).unwrap();
    let mut model = init_model(small_config(1), 0).unwrap();
    match train_baseline(
        &mut model,
        &data,
        VsHyperParams::cross_entropy(),
        &TrainConfig::new(2, 0.1, 0),
    ) {
        Err(Error::NonFiniteLoss { epoch: 0, batch: 0 }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn input_dimension_is_checked() {
    let data = synth_gaussian(20, 5, 3, 1.0, 0).unwrap();
    let mut model = init_model(small_config(1), 0).unwrap();
    assert!(matches!(
        train_baseline(
            &mut model,
            &data,
            VsHyperParams::cross_entropy(),
            &TrainConfig::new(1, 0.1, 0)
        ),
        Err(Error::Dimension { .. })
    ));
}
