mod common;

use common::{normal_equations_fit, quadratic_design, t_two_sided_by_quadrature};
use lct_core::analysis::*;
use lct_core::data::{split_counts, synth_gaussian, Dataset};
use lct_core::error::Error;
use lct_core::metrics::{roc_curve, LabeledScores, RocCurve};
use lct_core::nn::ModelConfig;
use lct_core::train::TrainConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        input_dim: 2,
        hidden: vec![8],
        lambda_dim: 1,
        film_hidden: 4,
        ..ModelConfig::default()
    }
}

fn sweep_data() -> (Dataset, Dataset) {
    let full = synth_gaussian(400, 100, 2, 2.0, 3).unwrap();
    let (train, test) = split_counts(&full, 50, 50, 3).unwrap();
    (train, test)
}

fn baseline_spec() -> SweepSpec {
    SweepSpec {
        grid: SweepGrid::Baseline {
            omegas: vec![0.5, 0.9],
            gammas: vec![0.0],
            taus: vec![0.0, 1.0],
        },
        model: tiny_model(),
        train: TrainConfig::new(3, 0.1, 0),
        seeds: vec![1],
        workers: 2,
    }
}

#[test]
fn two_by_two_grid_gives_four_records() {
    let (train, test) = sweep_data();
    let r = run_sweep(&baseline_spec(), &train, &test, None).unwrap();
    assert_eq!(r.records.len(), 4);
    assert!(r.records.iter().all(|x| x.error.is_none()));
}

#[test]
fn full_baseline_grid_has_48_points() {
    let spec = SweepSpec {
        grid: SweepGrid::Baseline {
            omegas: vec![0.5, 0.7, 0.9, 0.99],
            gammas: vec![0.0, 0.2, 0.4],
            taus: vec![0.0, 1.0, 2.0, 3.0],
        },
        ..baseline_spec()
    };
    assert_eq!(spec.points().len(), 48);
}

#[test]
fn resumed_sweep_matches_fresh_sweep() {
    let (train, test) = sweep_data();
    let spec = baseline_spec();
    let fresh = run_sweep(&spec, &train, &test, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = run_sweep(&spec, &train, &test, Some(dir.path())).unwrap();
    // simulate an interrupted run: drop one manifest
    let victim = dir.path().join(format!("{}.json", first.records[2].key));
    std::fs::remove_file(&victim).unwrap();
    let resumed = run_sweep(&spec, &train, &test, Some(dir.path())).unwrap();
    assert_eq!(resumed, fresh);
    assert_eq!(load_sweep_dir(dir.path()).unwrap().records.len(), 4);
}

#[test]
fn single_record_reproduces_bit_exactly() {
    let (train, test) = sweep_data();
    let spec = baseline_spec();
    let r = run_sweep(&spec, &train, &test, None).unwrap();
    let rec = &r.records[3];
    let again = spec.run_point(&rec.point, &train, &test);
    assert_eq!(again.metrics.unwrap().auc.to_bits(), rec.metrics.unwrap().auc.to_bits());
}

#[test]
fn failures_are_recorded_not_fatal() {
    // a training set without minority samples makes every run fail
    let (_, test) = sweep_data();
    let train = synth_gaussian(30, 1, 2, 1.0, 0).unwrap();
    let majority_only = train.select(&train.indices_of(0));
    let r = run_sweep(&baseline_spec(), &majority_only, &test, None).unwrap();
    assert_eq!(r.records.len(), 4);
    assert!(r.records.iter().all(|x| x.error.is_some() && x.metrics.is_none()));
}

#[test]
fn lct_grid_runs_and_writes_csv() {
    let (train, test) = sweep_data();
    let spec = SweepSpec {
        grid: SweepGrid::Lct {
            a: 0.0,
            b: 3.0,
            h_bs: vec![0.0, 0.66],
            omegas: vec![0.9],
            gamma: 0.0,
            eval_tau: 1.0,
        },
        ..baseline_spec()
    };
    let r = run_sweep(&spec, &train, &test, None).unwrap();
    assert_eq!(r.records.len(), 2);
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("key,omega,gamma,tau,h_b,seed,auc,accuracy,tpr,fpr,error"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn invalid_specs_are_rejected() {
    let (train, test) = sweep_data();
    let mut spec = baseline_spec();
    spec.seeds.clear();
    assert!(run_sweep(&spec, &train, &test, None).is_err());
    let spec = SweepSpec {
        grid: SweepGrid::Baseline {
            omegas: vec![1.5],
            gammas: vec![0.0],
            taus: vec![0.0],
        },
        ..baseline_spec()
    };
    assert!(run_sweep(&spec, &train, &test, None).is_err());
}

fn random_curve(r: &mut ChaCha8Rng) -> RocCurve {
    let n = r.random_range(4..40);
    let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let scores = (0..n).map(|_| r.random()).collect();
    roc_curve(&LabeledScores::new(scores, labels).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn aggregation_is_order_free_and_bracketed(seed in 0u64..1000, k in 2usize..8) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let curves: Vec<RocCurve> = (0..k).map(|_| random_curve(&mut r)).collect();
        let grid = default_fpr_grid();
        let refs: Vec<&RocCurve> = curves.iter().collect();
        let mut rev = refs.clone();
        rev.reverse();
        let a = aggregate_roc(&refs, &grid).unwrap();
        let b = aggregate_roc(&rev, &grid).unwrap();
        prop_assert_eq!(&a, &b);
        for i in 0..grid.len() {
            prop_assert!(a.min[i] <= a.mean[i] && a.mean[i] <= a.max[i]);
            prop_assert!(a.std[i] >= 0.0);
        }
    }

    #[test]
    fn t_test_is_antisymmetric(seed in 0u64..1000, n in 2usize..30) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        prop_assert_eq!(ab.t, -ba.t);
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert_eq!((ab.a_greater, ab.b_greater), (ba.b_greater, ba.a_greater));
    }

    #[test]
    fn r2_grows_with_nested_features(seed in 0u64..1000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = 30;
        let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let c: Vec<&[f64]> = cols.iter().map(|v| v.as_slice()).collect();
        let r1 = polyfit_r2(&c[..1], &y, 2).unwrap().r2;
        let r2 = polyfit_r2(&c[..2], &y, 2).unwrap().r2;
        let r3 = polyfit_r2(&c, &y, 2).unwrap().r2;
        prop_assert!(r1 <= r2 && r2 <= r3, "{r1} {r2} {r3}");
    }
}

#[test]
fn identical_curves_have_zero_spread() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let c = random_curve(&mut r);
    let agg = aggregate_roc(&[&c, &c, &c], &default_fpr_grid()).unwrap();
    assert!(agg.std.iter().all(|&s| s == 0.0));
    assert_eq!(agg.mean, agg.min);
    assert_eq!(agg.max, agg.min);
}

#[test]
fn noise_fit_matches_normal_equations() {
    let mut r = ChaCha8Rng::seed_from_u64(77);
    let n = 48;
    let cols: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..n).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = (0..n).map(|_| r.random()).collect();
    let c: Vec<&[f64]> = cols.iter().map(|v| v.as_slice()).collect();
    let fit = polyfit_r2(&c, &y, 2).unwrap();
    let (beta, r2) = normal_equations_fit(&quadratic_design(&c), &y);
    assert!((fit.r2 - r2).abs() < 1e-9);
    for (a, b) in fit.coefficients.iter().zip(&beta) {
        assert!((a - b).abs() < 1e-9);
    }
    // 10 terms on 48 noise rows: well below 1, well above 0
    assert!(fit.r2 > 0.0 && fit.r2 < 0.6);
}

#[test]
fn p_value_matches_quadrature_for_auc_sized_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(45);
    let b: Vec<f64> = (0..45).map(|_| r.random_range(0.7..0.95)).collect();
    let a: Vec<f64> = b.iter().map(|v| v + 0.012 + r.random_range(-0.04..0.04)).collect();
    let t = paired_t_test(&a, &b).unwrap();
    assert_eq!(t.df, 44.0);
    assert!((t.p_value - t_two_sided_by_quadrature(t.t, t.df)).abs() < 1e-6);
}

#[test]
fn mismatched_polyfit_inputs() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!(matches!(
        polyfit_r2(&[&x], &[1.0, 2.0], 2),
        Err(Error::Dimension { .. })
    ));
    assert!(polyfit_r2(&[], &[1.0], 2).is_err());
}
