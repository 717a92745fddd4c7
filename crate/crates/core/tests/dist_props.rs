mod common;

use common::linear_cdf;
use lct_core::dist::{LambdaPrior, LinearDistribution};
use lct_core::seed::{rng, Stream};
use proptest::prelude::*;

fn dist() -> impl Strategy<Value = LinearDistribution> {
    (-5.0..5.0f64, 0.05..10.0f64, 0.0..=1.0f64)
        .prop_map(|(a, w, frac)| LinearDistribution::new(a, a + w, frac * 2.0 / w).unwrap())
}

proptest! {
    #[test]
    fn unit_area(d in dist()) {
        prop_assert!((d.area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_matches_integrated_density(d in dist(), t in 0.0..=1.0f64) {
        let x = d.a() + t * (d.b() - d.a());
        prop_assert!((d.cdf(x) - linear_cdf(d.a(), d.b(), d.h_b(), x)).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf(d in dist(), u in 0.0..=1.0f64) {
        let x = d.quantile(u).unwrap();
        prop_assert!(x >= d.a() && x <= d.b());
        prop_assert!((d.cdf(x) - u).abs() < 1e-10);
    }

    #[test]
    fn quantile_is_monotone(d in dist(), u in 0.0..1.0f64, du in 0.0..0.5f64) {
        let v = (u + du).min(1.0);
        prop_assert!(d.quantile(u).unwrap() <= d.quantile(v).unwrap());
    }

    #[test]
    fn pdf_is_linear_and_non_negative(d in dist(), t in 0.0..=1.0f64) {
        let x = d.a() + t * (d.b() - d.a());
        let want = d.h_a() + t * (d.h_b() - d.h_a());
        prop_assert!(d.pdf(x) >= 0.0);
        prop_assert!((d.pdf(x) - want).abs() < 1e-9 * want.max(1.0));
    }
}

#[test]
fn equal_heights_are_uniform() {
    let d = LinearDistribution::new(1.0, 5.0, 0.25).unwrap();
    assert_eq!(d.h_a(), 0.25);
    for u in [0.0, 0.1, 0.5, 0.9, 1.0] {
        assert!((d.quantile(u).unwrap() - (1.0 + 4.0 * u)).abs() < 1e-14);
    }
}

#[test]
fn samples_stay_in_support_and_follow_the_mean() {
    let d = LinearDistribution::new(0.0, 3.0, 0.0).unwrap();
    let mut r = rng(3, Stream::Lambda);
    let n = 200_000;
    let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut r)).collect();
    assert!(xs.iter().all(|&x| (0.0..=3.0).contains(&x)));
    // triangle with mode at a: mean (2a + b) / 3 = 1, variance 0.5
    let mean = xs.iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 5.0 * (0.5f64 / n as f64).sqrt());
}

#[test]
fn histogram_within_multinomial_bands() {
    let d = LinearDistribution::new(0.0, 3.0, 0.0).unwrap();
    let mut r = rng(11, Stream::Lambda);
    let n = 100_000usize;
    let bins = 30;
    let mut counts = vec![0usize; bins];
    for _ in 0..n {
        let x = d.sample(&mut r);
        counts[((x / 3.0 * bins as f64) as usize).min(bins - 1)] += 1;
    }
    for (k, &c) in counts.iter().enumerate() {
        let lo = 3.0 * k as f64 / bins as f64;
        let hi = 3.0 * (k + 1) as f64 / bins as f64;
        let p = linear_cdf(0.0, 3.0, 0.0, hi) - linear_cdf(0.0, 3.0, 0.0, lo);
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (c as f64 - n as f64 * p).abs() < 4.0 * sd,
            "bin {k}: {c} vs {}",
            n as f64 * p
        );
    }
}

#[test]
fn json_round_trip_and_validation() {
    let d = LinearDistribution::new(0.0, 3.0, 0.15).unwrap();
    let text = serde_json::to_string(&d).unwrap();
    assert_eq!(text, r#"{"a":0.0,"b":3.0,"h_b":0.15}"#);
    assert_eq!(serde_json::from_str::<LinearDistribution>(&text).unwrap(), d);
    assert!(serde_json::from_str::<LinearDistribution>(r#"{"a":0.0,"b":3.0,"h_b":0.9}"#).is_err());
    assert!(serde_json::from_str::<LinearDistribution>(r#"{"a":0.0,"b":3.0,"h_b":0.1,"x":1}"#).is_err());

    let prior: LambdaPrior = serde_json::from_str("2.5").unwrap();
    assert_eq!(prior, LambdaPrior::PointMass(2.5));
    let prior: LambdaPrior = serde_json::from_str(&text).unwrap();
    assert_eq!(prior, LambdaPrior::Linear(d));
}

#[test]
fn invalid_supports_are_rejected() {
    assert!(LinearDistribution::new(1.0, 1.0, 0.0).is_err());
    assert!(LinearDistribution::new(0.0, f64::INFINITY, 0.0).is_err());
    assert!(LinearDistribution::new(0.0, 1.0, 2.5).is_err());
}
