//! Linear-density distribution on `[a, b]`.
//!
//! The density interpolates linearly between `h_a` at `a` and `h_b` at `b`.
//! It is uniform when `h_a = h_b` and triangular when either height is zero.
//! The user picks `a`, `b` and `h_b`; `h_a` follows from unit area.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this height difference the uniform branch of the inverse CDF is used.
const UNIFORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearParams", into = "LinearParams")]
pub struct LinearDistribution {
    a: f64,
    b: f64,
    h_a: f64,
    h_b: f64,
}

/// Serialized form: the user-facing parameters `(a, b, h_b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    pub a: f64,
    pub b: f64,
    pub h_b: f64,
}

impl TryFrom<LinearParams> for LinearDistribution {
    type Error = Error;

    fn try_from(p: LinearParams) -> Result<Self> {
        LinearDistribution::new(p.a, p.b, p.h_b)
    }
}

impl From<LinearDistribution> for LinearParams {
    fn from(d: LinearDistribution) -> Self {
        LinearParams {
            a: d.a,
            b: d.b,
            h_b: d.h_b,
        }
    }
}

impl LinearDistribution {
    /// Builds the distribution from its support and the density height at `b`.
    pub fn new(a: f64, b: f64, h_b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::domain(format!("support [{a}, {b}] must satisfy a < b")));
        }
        let max_height = 2.0 / (b - a);
        if !(h_b >= 0.0 && h_b <= max_height) {
            return Err(Error::domain(format!(
                "h_b = {h_b} outside [0, 2/(b-a)] = [0, {max_height}]"
            )));
        }
        Ok(Self {
            a,
            b,
            h_a: max_height - h_b,
            h_b,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn h_a(&self) -> f64 {
        self.h_a
    }

    pub fn h_b(&self) -> f64 {
        self.h_b
    }

    fn width(&self) -> f64 {
        self.b - self.a
    }

    /// Area under the density; one up to rounding.
    pub fn area(&self) -> f64 {
        0.5 * (self.h_a + self.h_b) * self.width()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.a || x > self.b {
            return 0.0;
        }
        self.h_a + (self.h_b - self.h_a) * (x - self.a) / self.width()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.a {
            return 0.0;
        }
        if x >= self.b {
            return 1.0;
        }
        let t = x - self.a;
        let v = self.h_a * t + (self.h_b - self.h_a) * t * t / (2.0 * self.width());
        v.clamp(0.0, 1.0)
    }

    /// Inverse CDF.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::domain(format!("probability {u} not in [0, 1]")));
        }
        Ok(self.quantile_unchecked(u))
    }

    fn quantile_unchecked(&self, u: f64) -> f64 {
        let w = self.width();
        if (self.h_b - self.h_a).abs() < UNIFORM_EPS {
            return self.a + u * w;
        }
        if u == 0.0 {
            return self.a;
        }
        // Solve k·t² + h_a·t − u = 0 for t = x − a, k = (h_b − h_a)/(2w).
        // The root in [0, w] is t = 2u / (h_a + sqrt(h_a² + 4ku)); this form
        // has no cancellation for either sign of k. Unit area keeps the
        // discriminant at or above h_b² ≥ 0.
        let k = (self.h_b - self.h_a) / (2.0 * w);
        let disc = (self.h_a * self.h_a + 4.0 * k * u).max(0.0);
        let t = 2.0 * u / (self.h_a + disc.sqrt());
        (self.a + t).clamp(self.a, self.b)
    }

    /// Draws one value by inverse-transform sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile_unchecked(u)
    }
}

/// How one conditioned hyperparameter is drawn during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaPrior {
    /// Every draw returns this value.
    PointMass(f64),
    Linear(LinearDistribution),
}

impl LambdaPrior {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            // consume a draw so both variants advance the stream identically
            LambdaPrior::PointMass(v) => {
                let _: f64 = rng.random();
                *v
            }
            LambdaPrior::Linear(d) => d.sample(rng),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            LambdaPrior::PointMass(v) => (*v, *v),
            LambdaPrior::Linear(d) => (d.a(), d.b()),
        }
    }
}
