//! Reference implementations used only by the tests.
#![allow(dead_code)]

use lct_core::metrics::LabeledScores;

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Mann-Whitney count: positives beating negatives, ties counted half.
pub fn pair_count_auc(s: &LabeledScores) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &yi) in s.labels().iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in s.labels().iter().enumerate() {
            if yj != 0 {
                continue;
            }
            pairs += 1.0;
            let (p, n) = (s.scores()[i], s.scores()[j]);
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Two-sided Student t tail from the density alone.
///
/// With `x = √ν·tan θ` the unnormalised density integrates as `cos^{ν−1} θ`
/// over `θ ∈ (−π/2, π/2)`, so the tail is a ratio of two smooth integrals.
pub fn t_two_sided_by_quadrature(t: f64, df: f64) -> f64 {
    let g = |th: f64| th.cos().powf(df - 1.0);
    let half = std::f64::consts::FRAC_PI_2;
    let theta = (t.abs() / df.sqrt()).atan();
    let n = 200_000;
    simpson(g, theta, half, n) / simpson(g, 0.0, half, n)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Least squares through the normal equations. Returns coefficients and R².
pub fn normal_equations_fit(design: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let p = design[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, &yi) in design.iter().zip(y) {
        for i in 0..p {
            xty[i] += row[i] * yi;
            for j in 0..p {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    let beta = solve_dense(xtx, xty);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (row, &yi) in design.iter().zip(y) {
        let pred: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        ss_res += (yi - pred).powi(2);
        ss_tot += (yi - mean).powi(2);
    }
    (beta, 1.0 - ss_res / ss_tot)
}

/// Degree-2 design rows written out by hand: intercept, linears, then
/// squares and cross products in lexicographic order.
pub fn quadratic_design(cols: &[&[f64]]) -> Vec<Vec<f64>> {
    let n = cols[0].len();
    (0..n)
        .map(|r| {
            let x: Vec<f64> = cols.iter().map(|c| c[r]).collect();
            let mut row = vec![1.0];
            row.extend(&x);
            for i in 0..x.len() {
                for j in i..x.len() {
                    row.push(x[i] * x[j]);
                }
            }
            row
        })
        .collect()
}

/// Linear-density CDF written from the density by direct integration.
pub fn linear_cdf(a: f64, b: f64, h_b: f64, x: f64) -> f64 {
    let h_a = 2.0 / (b - a) - h_b;
    let x = x.clamp(a, b);
    // ∫_a^x h_a + (h_b − h_a)(s − a)/(b − a) ds
    let t = x - a;
    h_a * t + 0.5 * (h_b - h_a) * t * t / (b - a)
}
