//! Binary classification metrics with the minority class as the positive class.
//!
//! A sample is predicted positive iff its minority score is strictly greater
//! than the threshold. Rates whose denominator is zero are reported as `None`
//! rather than silently becoming zero.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minority-class scores with their true labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Dimension {
                what: "labels",
                expected: scores.len(),
                got: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(Error::Insufficient("no samples".into()));
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(Error::domain(format!("label {} at index {i} is not 0 or 1", labels[i])));
        }
        if let Some(i) = scores.iter().position(|s| s.is_nan()) {
            return Err(Error::NonFinite(format!("score at index {i} is NaN")));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `(negatives, positives)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        (self.len() - pos, pos)
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (neg, pos) = self.class_counts();
        if neg == 0 || pos == 0 {
            return Err(Error::Insufficient(format!(
                "need both classes, got {neg} negatives and {pos} positives"
            )));
        }
        Ok((neg, pos))
    }

    /// Writes `score,label` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["score", "label"])?;
        for (s, y) in self.scores.iter().zip(&self.labels) {
            w.write_record(&[s.to_string(), y.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::domain(format!("missing column {name:?}")))
        };
        let (si, li) = (col("score")?, col("label")?);
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |m: String| Error::Parse {
                path: "<scores>".into(),
                row: row + 2,
                message: m,
            };
            let s: f64 = rec[si].trim().parse().map_err(|e| bad(format!("score: {e}")))?;
            let y: u8 = match rec[li].trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(format!("label {other:?} is not 0 or 1"))),
            };
            scores.push(s);
            labels.push(y);
        }
        Self::new(scores, labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// True positive rate, minority-class accuracy, recall.
    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// False positive rate, one minus majority-class accuracy.
    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    /// True negative rate (specificity).
    pub fn tnr(&self) -> Option<f64> {
        ratio(self.tn, self.fp + self.tn)
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        self.tpr()
    }

    pub fn overall_accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    /// Geometric mean of sensitivity and specificity.
    pub fn g_mean(&self) -> Option<f64> {
        Some((self.tpr()? * self.tnr()?).sqrt())
    }

    /// `F_b`, where `b` weighs recall against precision.
    pub fn f_beta(&self, b: f64) -> Option<f64> {
        f_beta_from(self.precision()?, self.recall()?, b)
    }

    pub fn f1(&self) -> Option<f64> {
        self.f_beta(1.0)
    }

    pub fn bundle(&self) -> MetricBundle {
        MetricBundle {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
            tpr: self.tpr(),
            fpr: self.fpr(),
            precision: self.precision(),
            overall_accuracy: self.overall_accuracy(),
            f1: self.f1(),
            g_mean: self.g_mean(),
        }
    }
}

/// `(1 + b²)·P·R / (b²·P + R)`; `None` when undefined.
pub fn f_beta_from(precision: f64, recall: f64, b: f64) -> Option<f64> {
    if !(b > 0.0) {
        return None;
    }
    let b2 = b * b;
    let den = b2 * precision + recall;
    (den > 0.0).then(|| (1.0 + b2) * precision * recall / den)
}

/// Flat record of the threshold metrics, for JSON output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub precision: Option<f64>,
    pub overall_accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub g_mean: Option<f64>,
}

pub fn confusion(s: &LabeledScores, threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&p, &y) in s.scores.iter().zip(&s.labels) {
        match (p > threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC polyline from `(0, 0)` to `(1, 1)` with its trapezoidal area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// Builds a curve from points, sorting and deduplicating them.
    pub fn from_points(mut points: Vec<RocPoint>) -> Result<Self> {
        if points
            .iter()
            .any(|p| !(0.0..=1.0).contains(&p.fpr) || !(0.0..=1.0).contains(&p.tpr))
        {
            return Err(Error::domain("ROC coordinates must lie in [0, 1]"));
        }
        points.push(RocPoint { fpr: 0.0, tpr: 0.0 });
        points.push(RocPoint { fpr: 1.0, tpr: 1.0 });
        points.sort_by(|a, b| a.fpr.total_cmp(&b.fpr).then(a.tpr.total_cmp(&b.tpr)));
        points.dedup();
        for w in points.windows(2) {
            if w[1].tpr < w[0].tpr {
                return Err(Error::domain("ROC points are not monotone"));
            }
        }
        let auc = trapezoid(&points);
        Ok(Self { points, auc })
    }

    /// TPR at each FPR in `grid`, by linear interpolation along the curve.
    ///
    /// Where the curve rises vertically at a grid FPR, the top of the rise
    /// is returned.
    pub fn tpr_at(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&g| self.interpolate(g)).collect()
    }

    fn interpolate(&self, fpr: f64) -> f64 {
        let pts = &self.points;
        // last vertex with fpr <= target
        let idx = pts.partition_point(|p| p.fpr <= fpr);
        if idx == 0 {
            return pts[0].tpr;
        }
        let left = pts[idx - 1];
        if left.fpr == fpr || idx == pts.len() {
            return left.tpr;
        }
        let right = pts[idx];
        let t = (fpr - left.fpr) / (right.fpr - left.fpr);
        left.tpr + t * (right.tpr - left.tpr)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fpr", "tpr"])?;
        for p in &self.points {
            w.write_record(&[p.fpr.to_string(), p.tpr.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

fn trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) * 0.5)
        .sum()
}

/// ROC curve over every distinct score used as a threshold, plus the
/// sentinels above the maximum and below the minimum.
pub fn roc_curve(s: &LabeledScores) -> Result<RocCurve> {
    let (neg, pos) = s.require_both_classes()?;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));

    // Threshold just below a run of tied scores flips the whole run.
    let mut points = Vec::with_capacity(s.len() + 2);
    points.push(RocPoint { fpr: 0.0, tpr: 0.0 });
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let v = s.scores[order[i]];
        while i < order.len() && s.scores[order[i]] == v {
            if s.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    points.dedup();
    let auc = trapezoid(&points);
    Ok(RocCurve { points, auc })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Quadratic pair count; used to cross-check [`roc_curve`].
pub fn auc_pair_oracle(s: &LabeledScores) -> Result<f64> {
    let (neg, pos) = s.require_both_classes()?;
    let mut wins = 0u64;
    let mut ties = 0u64;
    for (i, &si) in s.scores.iter().enumerate() {
        if s.labels[i] != 1 {
            continue;
        }
        for (j, &sj) in s.scores.iter().enumerate() {
            if s.labels[j] != 0 {
                continue;
            }
            if si > sj {
                wins += 1;
            } else if si == sj {
                ties += 1;
            }
        }
    }
    Ok((wins as f64 + 0.5 * ties as f64) / (pos as f64 * neg as f64))
}

/// Interpolated TPR of `curve` on an FPR grid.
pub fn roc_at_fpr_grid(curve: &RocCurve, grid: &[f64]) -> Vec<f64> {
    curve.tpr_at(grid)
}
