//! The Vector Scaling (VS) loss family for binary problems.
//!
//! Class 0 is the majority class and class 1 the minority class. The loss is
//! a weighted cross-entropy on affinely transformed logits `Δ_c·z_c + ι_c`
//! with `Δ_c = (n_c/n_0)^γ` and `ι_c = τ·ln(n_c/n)`; the minority class is
//! weighted by `Ω` and the majority class by `1 − Ω`.
//!
//! In the binary case everything reduces to a single margin
//! `m = z0 + τ·ln β − z1/β^γ`:
//!
//! ```text
//! ℓ(0, z) = (1 − Ω)·softplus(−m)
//! ℓ(1, z) =       Ω·softplus(m)
//! ```
//!
//! The set where both labels give the same loss (the break-even set) is the
//! line `z1/β^γ = z0 + τ·ln β + α_Ω`, where `α_Ω` is the unique root of
//! `(1 + e^{−α})^Ω = (1 + e^{α})^{1−Ω}`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the loss family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VsHyperParams {
    /// Weight on the minority class, in `[0, 1]`.
    pub omega: f64,
    /// Exponent of the multiplicative logit factor, `≥ 0`.
    pub gamma: f64,
    /// Scale of the additive logit factor, `≥ 0`.
    pub tau: f64,
}

impl VsHyperParams {
    pub fn new(omega: f64, gamma: f64, tau: f64) -> Result<Self> {
        let p = Self { omega, gamma, tau };
        p.validate()?;
        Ok(p)
    }

    /// Plain cross-entropy with both classes weighted 0.5.
    pub const fn cross_entropy() -> Self {
        Self {
            omega: 0.5,
            gamma: 0.0,
            tau: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::domain(format!("omega = {} not in [0, 1]", self.omega)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::domain(format!("gamma = {} must be finite and >= 0", self.gamma)));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::domain(format!("tau = {} must be finite and >= 0", self.tau)));
        }
        Ok(())
    }

    /// Class weight `ω_y`.
    pub fn class_weight(&self, y: u8) -> f64 {
        if y == 1 {
            self.omega
        } else {
            1.0 - self.omega
        }
    }
}

/// Training-set class counts; class 0 is the majority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    n0: u64,
    n1: u64,
}

impl ClassCounts {
    pub fn new(n0: u64, n1: u64) -> Result<Self> {
        if n1 == 0 {
            return Err(Error::domain("minority count n1 must be >= 1"));
        }
        if n0 < n1 {
            return Err(Error::domain(format!(
                "majority count n0 = {n0} is smaller than minority count n1 = {n1}"
            )));
        }
        Ok(Self { n0, n1 })
    }

    pub fn n0(&self) -> u64 {
        self.n0
    }

    pub fn n1(&self) -> u64 {
        self.n1
    }

    pub fn total(&self) -> u64 {
        self.n0 + self.n1
    }

    /// Imbalance ratio `β = n0 / n1`.
    pub fn beta(&self) -> f64 {
        self.n0 as f64 / self.n1 as f64
    }

    pub fn count(&self, class: u8) -> u64 {
        if class == 1 {
            self.n1
        } else {
            self.n0
        }
    }
}

/// Raw network outputs for the two classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitPair {
    pub z0: f64,
    pub z1: f64,
}

impl LogitPair {
    pub fn new(z0: f64, z1: f64) -> Result<Self> {
        if !(z0.is_finite() && z1.is_finite()) {
            return Err(Error::NonFinite(format!("logits ({z0}, {z1})")));
        }
        Ok(Self { z0, z1 })
    }

    /// Softmax probability of the minority class.
    pub fn p1(&self) -> f64 {
        sigmoid(self.z1 - self.z0)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_label(y: u8) -> Result<()> {
    if y > 1 {
        return Err(Error::domain(format!("class label {y} is not 0 or 1")));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 1.0 && beta.is_finite()) {
        return Err(Error::domain(format!("beta = {beta} must be finite and >= 1")));
    }
    Ok(())
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{what} evaluated to {value}")))
    }
}

/// VS loss evaluated from its defining softmax form over both classes.
///
/// This is the reference route: it builds `Δ_c·z_c + ι_c` for each class
/// from the raw counts and takes a log-sum-exp.
pub fn vs_loss_general(y: u8, z: LogitPair, p: VsHyperParams, counts: ClassCounts) -> Result<f64> {
    check_label(y)?;
    p.validate()?;
    let n0 = counts.n0() as f64;
    let n = counts.total() as f64;
    let logits = [z.z0, z.z1];
    let mut transformed = [0.0; 2];
    for (c, a) in transformed.iter_mut().enumerate() {
        let n_c = counts.count(c as u8) as f64;
        let scale = (n_c / n0).powf(p.gamma);
        let offset = p.tau * (n_c / n).ln();
        *a = scale * logits[c] + offset;
    }
    // -log softmax_y = lse(a) - a_y, written so the result keeps full
    // relative precision when it is tiny.
    let (argmax, max) =
        transformed.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
        );
    let rest: f64 = transformed
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != argmax)
        .map(|(_, &a)| (a - max).exp())
        .sum();
    let neg_log_softmax = (max - transformed[y as usize]) + rest.ln_1p();
    finite(p.class_weight(y) * neg_log_softmax, "VS loss")
}

/// The binary VS loss with `β^{-γ}` and `τ·ln β` precomputed.
///
/// This is the form used in training loops; [`vs_loss_binary`] and
/// [`vs_loss_grad_logits`] are thin checked wrappers around it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryVsLoss {
    omega: f64,
    inv_scale: f64,
    shift: f64,
}

impl BinaryVsLoss {
    pub fn new(p: VsHyperParams, beta: f64) -> Result<Self> {
        p.validate()?;
        check_beta(beta)?;
        Ok(Self::new_unchecked(p, beta))
    }

    pub(crate) fn new_unchecked(p: VsHyperParams, beta: f64) -> Self {
        let ln_beta = beta.ln();
        Self {
            omega: p.omega,
            inv_scale: (-p.gamma * ln_beta).exp(),
            shift: p.tau * ln_beta,
        }
    }

    /// `m = z0 + τ·ln β − z1/β^γ`.
    #[inline]
    pub fn margin(&self, z0: f64, z1: f64) -> f64 {
        z0 + self.shift - z1 * self.inv_scale
    }

    #[inline]
    pub fn loss(&self, y: u8, z0: f64, z1: f64) -> f64 {
        let m = self.margin(z0, z1);
        if y == 1 {
            self.omega * softplus(m)
        } else {
            (1.0 - self.omega) * softplus(-m)
        }
    }

    /// Loss and its gradient with respect to `(z0, z1)`.
    #[inline]
    pub fn loss_and_grad(&self, y: u8, z0: f64, z1: f64) -> (f64, f64, f64) {
        let m = self.margin(z0, z1);
        // dℓ/dm; dm/dz0 = 1, dm/dz1 = -β^{-γ}
        let (loss, dm) = if y == 1 {
            (self.omega * softplus(m), self.omega * sigmoid(m))
        } else {
            let w = 1.0 - self.omega;
            (w * softplus(-m), -w * sigmoid(-m))
        };
        (loss, dm, -dm * self.inv_scale)
    }
}

/// VS loss in the simplified binary form.
pub fn vs_loss_binary(y: u8, z: LogitPair, p: VsHyperParams, beta: f64) -> Result<f64> {
    check_label(y)?;
    let loss = BinaryVsLoss::new(p, beta)?;
    finite(loss.loss(y, z.z0, z.z1), "VS loss")
}

/// Gradient `(dℓ/dz0, dℓ/dz1)` of the binary VS loss.
pub fn vs_loss_grad_logits(y: u8, z: LogitPair, p: VsHyperParams, beta: f64) -> Result<(f64, f64)> {
    check_label(y)?;
    let loss = BinaryVsLoss::new(p, beta)?;
    let (_, d0, d1) = loss.loss_and_grad(y, z.z0, z.z1);
    Ok((d0, d1))
}

/// Partial derivatives of `ℓ(1, z)` with respect to the hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPartials {
    pub d_omega: f64,
    pub d_gamma: f64,
    pub d_tau: f64,
}

/// Closed-form hyperparameter partials of the minority-label loss.
pub fn vs_loss_partials_hyper(z: LogitPair, p: VsHyperParams, beta: f64) -> Result<HyperPartials> {
    p.validate()?;
    if !(beta > 1.0 && beta.is_finite()) {
        return Err(Error::domain(format!("beta = {beta} must be finite and > 1")));
    }
    let ln_beta = beta.ln();
    let inv_scale = (-p.gamma * ln_beta).exp();
    let m = z.z0 + p.tau * ln_beta - z.z1 * inv_scale;
    // β^τ e^{z0 - z1/β^γ} / (1 + β^τ e^{z0 - z1/β^γ}) = sigmoid(m)
    let s = sigmoid(m);
    Ok(HyperPartials {
        d_omega: softplus(m),
        d_gamma: p.omega * z.z1 * ln_beta * inv_scale * s,
        d_tau: p.omega * ln_beta * s,
    })
}

/// `(1 + e^{−α})^Ω − (1 + e^{α})^{1−Ω}`, zero exactly on the break-even set.
pub fn break_even_residual(omega: f64, alpha: f64) -> f64 {
    (1.0 + (-alpha).exp()).powf(omega) - (1.0 + alpha.exp()).powf(1.0 - omega)
}

fn check_open_unit(omega: f64) -> Result<()> {
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::domain(format!(
            "omega = {omega} must lie in the open interval (0, 1)"
        )));
    }
    Ok(())
}

const INITIAL_BRACKET: f64 = 50.0;
const MAX_EXPANSIONS: usize = 64;

/// Bisection for a root of a strictly decreasing `f`, expanding the
/// starting bracket `[-50, 50]` by doubling until it straddles the root.
/// Runs until the bracket cannot be split any further.
fn bisect_decreasing(f: impl Fn(f64) -> f64) -> f64 {
    let mut lo = -INITIAL_BRACKET;
    let mut hi = INITIAL_BRACKET;
    for _ in 0..MAX_EXPANSIONS {
        if f(lo) >= 0.0 {
            break;
        }
        lo *= 2.0;
    }
    for _ in 0..MAX_EXPANSIONS {
        if f(hi) <= 0.0 {
            break;
        }
        hi *= 2.0;
    }
    bisect(lo, hi, |x| -f(x))
}

/// Bisection on `[lo, hi]` for an increasing function.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // lo and hi are adjacent floats
            return if f(lo).abs() <= f(hi).abs() { lo } else { hi };
        }
        let v = f(mid);
        if v == 0.0 {
            return mid;
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// The offset `α_Ω` of the break-even line.
///
/// Positive for `Ω > 0.5`, negative for `Ω < 0.5` and exactly zero at 0.5.
pub fn break_even_alpha(omega: f64) -> Result<f64> {
    check_open_unit(omega)?;
    // Same root as break_even_residual, compared on the log scale so the
    // bracket can grow without overflowing the powers.
    Ok(bisect_decreasing(|a| {
        omega * softplus(-a) - (1.0 - omega) * softplus(a)
    }))
}

/// The break-even set `z1 = slope·z0 + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakEvenLine {
    pub slope: f64,
    pub intercept: f64,
    pub alpha_omega: f64,
}

impl BreakEvenLine {
    pub fn z1_at(&self, z0: f64) -> f64 {
        self.slope * z0 + self.intercept
    }
}

pub fn break_even_line(p: VsHyperParams, beta: f64) -> Result<BreakEvenLine> {
    p.validate()?;
    check_beta(beta)?;
    let alpha_omega = break_even_alpha(p.omega)?;
    let slope = beta.powf(p.gamma);
    Ok(BreakEvenLine {
        slope,
        intercept: slope * (p.tau * beta.ln() + alpha_omega),
        alpha_omega,
    })
}

/// Minority softmax score `β^τ / (1 + β^τ)` of a break-even sample under
/// `Ω = 0.5, γ = 0`.
pub fn break_even_softmax_score(beta: f64, tau: f64) -> Result<f64> {
    check_beta(beta)?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::domain(format!("tau = {tau} must be finite and >= 0")));
    }
    Ok(sigmoid(tau * beta.ln()))
}

/// The score `p1` at which the Ω-weighted cross-entropy losses of both
/// labels meet: `p1^Ω = (1 − p1)^{1−Ω}`.
pub fn omega_softmax_intersection(omega: f64) -> Result<f64> {
    check_open_unit(omega)?;
    Ok(bisect(0.0, 1.0, |p| omega * p.ln() - (1.0 - omega) * (-p).ln_1p()))
}

/// `ℓ(1, z) − ℓ(0, z)` sampled on a square grid of logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGrid {
    /// Shared coordinate axis for `z0` and `z1`.
    pub axis: Vec<f64>,
    /// Row-major values; row index walks `z1`, column index walks `z0`.
    pub values: Vec<f64>,
}

impl LossGrid {
    pub fn steps(&self) -> usize {
        self.axis.len()
    }

    /// Value at `(z0 = axis[i0], z1 = axis[i1])`.
    pub fn at(&self, i0: usize, i1: usize) -> f64 {
        self.values[i1 * self.steps() + i0]
    }

    /// Writes `z0,z1,diff` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["z0", "z1", "diff"])?;
        for (i1, &z1) in self.axis.iter().enumerate() {
            for (i0, &z0) in self.axis.iter().enumerate() {
                w.write_record(&[z0.to_string(), z1.to_string(), self.at(i0, i1).to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    let last = (steps - 1) as f64;
    (0..steps)
        .map(|k| {
            if k + 1 == steps {
                hi
            } else {
                lo + (hi - lo) * (k as f64 / last)
            }
        })
        .collect()
}

pub fn loss_difference_grid(p: VsHyperParams, beta: f64, lo: f64, hi: f64, steps: usize) -> Result<LossGrid> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::domain(format!("grid range [{lo}, {hi}] is empty")));
    }
    if steps < 2 {
        return Err(Error::domain(format!("grid needs at least 2 steps, got {steps}")));
    }
    let loss = BinaryVsLoss::new(p, beta)?;
    let axis = linspace(lo, hi, steps);
    let mut values = Vec::with_capacity(steps * steps);
    for &z1 in &axis {
        for &z0 in &axis {
            values.push(loss.loss(1, z0, z1) - loss.loss(0, z0, z1));
        }
    }
    Ok(LossGrid { axis, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn z(z0: f64, z1: f64) -> LogitPair {
        LogitPair::new(z0, z1).unwrap()
    }

    #[test]
    fn general_form_examples() {
        let ce = VsHyperParams::cross_entropy();
        let counts = ClassCounts::new(37, 5).unwrap();
        let v = vs_loss_general(0, z(0.0, 0.0), ce, counts).unwrap();
        assert_relative_eq!(v, 0.5 * 2f64.ln(), max_relative = 1e-15);

        let p = VsHyperParams::new(0.5, 0.0, 1.0).unwrap();
        let v = vs_loss_general(1, z(0.0, 0.0), p, ClassCounts::new(10, 1).unwrap()).unwrap();
        assert_relative_eq!(v, 0.5 * 11f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(v, 1.198948, epsilon = 1e-6);

        let v = vs_loss_general(0, z(5.0, -5.0), ce, counts).unwrap();
        assert_relative_eq!(v, 0.5 * (-10f64).exp().ln_1p(), max_relative = 1e-14);
        assert_relative_eq!(v, 2.27e-5, epsilon = 1e-7);
    }

    #[test]
    fn binary_form_examples() {
        let p = VsHyperParams::new(1.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(vs_loss_binary(1, z(0.0, 0.0), p, 7.0).unwrap(), 2f64.ln());
        let p = VsHyperParams::new(0.5, 1.0, 0.0).unwrap();
        assert_relative_eq!(vs_loss_binary(0, z(0.0, 0.0), p, 4.0).unwrap(), 0.5 * 2f64.ln());
    }

    #[test]
    fn logit_gradient_at_origin() {
        let g = vs_loss_grad_logits(1, z(0.0, 0.0), VsHyperParams::cross_entropy(), 3.0).unwrap();
        assert_eq!(g, (0.25, -0.25));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(VsHyperParams::new(1.1, 0.0, 0.0).is_err());
        assert!(VsHyperParams::new(0.5, -0.1, 0.0).is_err());
        assert!(VsHyperParams::new(0.5, 0.0, f64::NAN).is_err());
        assert!(ClassCounts::new(3, 0).is_err());
        assert!(ClassCounts::new(3, 4).is_err());
        assert!(LogitPair::new(f64::INFINITY, 0.0).is_err());
        let ce = VsHyperParams::cross_entropy();
        assert!(vs_loss_binary(2, z(0.0, 0.0), ce, 2.0).is_err());
        assert!(vs_loss_binary(0, z(0.0, 0.0), ce, 0.5).is_err());
        assert!(vs_loss_partials_hyper(z(0.0, 0.0), ce, 1.0).is_err());
    }

    #[test]
    fn extreme_margins_stay_finite() {
        let p = VsHyperParams::new(0.9, 0.0, 3.0).unwrap();
        let v = vs_loss_binary(1, z(700.0, -700.0), p, 1e6).unwrap();
        assert!(v.is_finite() && v > 1000.0);
        let v = vs_loss_binary(0, z(700.0, -700.0), p, 1e6).unwrap();
        assert!((0.0..1e-300).contains(&v));
    }

    #[test]
    fn partials_with_zero_minority_logit() {
        let p = VsHyperParams::new(0.7, 0.3, 1.5).unwrap();
        let d = vs_loss_partials_hyper(z(1.3, 0.0), p, 20.0).unwrap();
        assert_eq!(d.d_gamma, 0.0);
        assert!(d.d_tau > 0.0);
    }

    #[test]
    fn d_omega_does_not_depend_on_omega() {
        let beta = 12.0;
        let zz = z(0.4, -1.1);
        let a = vs_loss_partials_hyper(zz, VsHyperParams::new(0.2, 0.3, 1.0).unwrap(), beta).unwrap();
        let b = vs_loss_partials_hyper(zz, VsHyperParams::new(0.95, 0.3, 1.0).unwrap(), beta).unwrap();
        assert_eq!(a.d_omega, b.d_omega);
        let expected = (1.0 + beta.powf(1.0) * (0.4 - (-1.1) / beta.powf(0.3)).exp()).ln();
        assert_relative_eq!(a.d_omega, expected, max_relative = 1e-14);
    }

    #[test]
    fn alpha_at_half_is_zero() {
        assert_eq!(break_even_alpha(0.5).unwrap(), 0.0);
        assert!(break_even_alpha(0.9).unwrap() > 0.0);
        assert!(break_even_alpha(0.1).unwrap() < 0.0);
        assert!(break_even_alpha(0.0).is_err());
        assert!(break_even_alpha(1.0).is_err());
    }

    #[test]
    fn alpha_for_extreme_omega_needs_bracket_growth() {
        for omega in [1e-30, 1e-12, 1.0 - 1e-12] {
            let a = break_even_alpha(omega).unwrap();
            let g = omega * softplus(-a) - (1.0 - omega) * softplus(a);
            assert!(g.abs() < 1e-12, "omega {omega}: alpha {a} g {g}");
        }
        assert!(break_even_alpha(1e-30).unwrap() < -INITIAL_BRACKET);
    }

    #[test]
    fn softmax_score_examples() {
        assert_relative_eq!(
            break_even_softmax_score(10.0, 2.0).unwrap(),
            100.0 / 101.0,
            max_relative = 1e-15
        );
        assert_eq!(break_even_softmax_score(10.0, 0.0).unwrap(), 0.5);
        assert_eq!(break_even_softmax_score(1.0, 2.5).unwrap(), 0.5);
    }

    #[test]
    fn intersection_at_half() {
        assert_eq!(omega_softmax_intersection(0.5).unwrap(), 0.5);
        assert!(omega_softmax_intersection(1.0).is_err());
    }

    #[test]
    fn tiny_grid() {
        let g = loss_difference_grid(VsHyperParams::cross_entropy(), 10.0, -1.0, 1.0, 2).unwrap();
        assert_eq!(g.values.len(), 4);
        assert!(g.values.iter().all(|v| v.is_finite()));
        assert!(loss_difference_grid(VsHyperParams::cross_entropy(), 10.0, 1.0, 1.0, 5).is_err());
        assert!(loss_difference_grid(VsHyperParams::cross_entropy(), 10.0, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn grid_csv_has_header_and_rows() {
        let g = loss_difference_grid(VsHyperParams::cross_entropy(), 10.0, -1.0, 1.0, 3).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("z0,z1,diff"));
        assert_eq!(lines.count(), 9);
    }
}
