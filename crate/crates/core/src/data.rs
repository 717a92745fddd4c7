//! Binary datasets: synthetic Gaussian classes, minority subsampling,
//! stratified splits and CSV I/O.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::loss::ClassCounts;
use crate::seed::{self, Stream};

/// Row-major `n × d` feature matrix with labels in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    n0: usize,
    n1: usize,
}

impl Dataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("feature dimension must be >= 1"));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::Dimension {
                what: "feature matrix",
                expected: dim * labels.len(),
                got: features.len(),
            });
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(Error::domain(format!("label {} at row {i} is not 0 or 1", labels[i])));
        }
        let n1 = labels.iter().filter(|&&y| y == 1).count();
        Ok(Self {
            dim,
            n0: labels.len() - n1,
            n1,
            features,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    /// Imbalance ratio `n0 / n1` (infinite when there is no minority sample).
    pub fn beta(&self) -> f64 {
        self.n0 as f64 / self.n1 as f64
    }

    pub fn class_counts(&self) -> Result<ClassCounts> {
        ClassCounts::new(self.n0 as u64, self.n1 as u64)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    /// Indices of the samples of one class, in dataset order.
    pub fn indices_of(&self, class: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(self.dim, features, labels).expect("rows of a valid dataset")
    }

    /// Writes a header (`label,x0,x1,…`) and one row per sample.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.labels[i].to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a CSV with a `label` column and numeric feature columns.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, path)
    }

    /// Like [`Self::load_csv`]; `origin` only labels error messages.
    pub fn read_csv<R: std::io::Read>(input: R, origin: &Path) -> Result<Self> {
        let parse_err = |row: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            row,
            message,
        };
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = r.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        let label_col = headers
            .iter()
            .position(|h| h == "label")
            .ok_or_else(|| parse_err(1, "no column named \"label\"".into()))?;
        let dim = headers.len() - 1;
        if dim == 0 {
            return Err(parse_err(1, "no feature columns".into()));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (k, rec) in r.records().enumerate() {
            // header is row 1
            let row = k + 2;
            let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
            if rec.len() != headers.len() {
                return Err(parse_err(
                    row,
                    format!("expected {} fields, found {}", headers.len(), rec.len()),
                ));
            }
            for (j, field) in rec.iter().enumerate() {
                if j == label_col {
                    let y = match field {
                        "0" => 0,
                        "1" => 1,
                        other => return Err(parse_err(row, format!("label {other:?} is not 0 or 1"))),
                    };
                    labels.push(y);
                } else {
                    let v: f64 = field
                        .parse()
                        .map_err(|_| parse_err(row, format!("column {:?}: {field:?} is not a number", &headers[j])))?;
                    if !v.is_finite() {
                        return Err(parse_err(row, format!("column {:?}: non-finite value", &headers[j])));
                    }
                    features.push(v);
                }
            }
        }
        let ds = Self::new(dim, features, labels)?;
        if ds.n0 == 0 || ds.n1 == 0 {
            return Err(parse_err(
                ds.len() + 1,
                format!("empty class: {} majority and {} minority rows", ds.n0, ds.n1),
            ));
        }
        Ok(ds)
    }
}

/// Two standard-normal classes: class 0 centred at the origin, class 1 at
/// `(separation, 0, …, 0)`. Majority samples come first.
pub fn synth_gaussian(n0: usize, n1: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n0 == 0 || n1 == 0 || dim == 0 {
        return Err(Error::domain("synth_gaussian needs n0, n1, dim >= 1"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::domain(format!(
            "separation = {separation} must be finite and >= 0"
        )));
    }
    let mut rng = seed::rng(seed, Stream::Data);
    let mut features = Vec::with_capacity((n0 + n1) * dim);
    let mut labels = Vec::with_capacity(n0 + n1);
    for (class, count) in [(0u8, n0), (1u8, n1)] {
        for _ in 0..count {
            for j in 0..dim {
                let v: f64 = StandardNormal.sample(&mut rng);
                features.push(if class == 1 && j == 0 { v + separation } else { v });
            }
            labels.push(class);
        }
    }
    Dataset::new(dim, features, labels)
}

/// Minority count kept when subsampling `n0` majority samples to ratio `beta`.
pub fn subsampled_minority_count(n0: usize, target_beta: f64) -> usize {
    // the epsilon keeps exact ratios such as 5000/(5000/500) from rounding down
    (n0 as f64 / target_beta + 1e-9).floor() as usize
}

/// Keeps every majority sample and `floor(n0 / target_beta)` minority
/// samples chosen uniformly without replacement. Row order is preserved.
pub fn subsample_minority(d: &Dataset, target_beta: f64, seed: u64) -> Result<Dataset> {
    if !(target_beta.is_finite() && target_beta > 0.0) {
        return Err(Error::domain(format!(
            "target beta {target_beta} must be finite and > 0"
        )));
    }
    let keep = subsampled_minority_count(d.n0, target_beta);
    if keep > d.n1 {
        return Err(Error::domain(format!(
            "target beta {target_beta} is below the current beta {} (would need {keep} minority samples, have {})",
            d.beta(),
            d.n1
        )));
    }
    if keep == 0 {
        return Err(Error::domain(format!(
            "target beta {target_beta} leaves no minority samples from n0 = {}",
            d.n0
        )));
    }
    let mut minority = d.indices_of(1);
    let mut rng = seed::rng(seed, Stream::Subsample);
    minority.shuffle(&mut rng);
    let mut kept = vec![false; d.len()];
    for &i in &minority[..keep] {
        kept[i] = true;
    }
    let indices: Vec<usize> = (0..d.len()).filter(|&i| d.labels[i] == 0 || kept[i]).collect();
    Ok(d.select(&indices))
}

/// Stratified split with explicit per-class test sizes. Returns `(train, test)`.
pub fn split_counts(d: &Dataset, test_n0: usize, test_n1: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if test_n0 > d.n0 || test_n1 > d.n1 {
        return Err(Error::Insufficient(format!(
            "test set of {test_n0}+{test_n1} requested from {}+{} samples",
            d.n0, d.n1
        )));
    }
    let mut rng = seed::rng(seed, Stream::Split);
    let mut test = Vec::with_capacity(test_n0 + test_n1);
    let mut in_test = vec![false; d.len()];
    for (class, n_test) in [(0u8, test_n0), (1u8, test_n1)] {
        let mut idx = d.indices_of(class);
        idx.shuffle(&mut rng);
        for &i in &idx[..n_test] {
            in_test[i] = true;
        }
    }
    test.extend((0..d.len()).filter(|&i| in_test[i]));
    let train: Vec<usize> = (0..d.len()).filter(|&i| !in_test[i]).collect();
    Ok((d.select(&train), d.select(&test)))
}

/// Stratified split sending `round(fraction · n_c)` samples of each class to
/// the test side. Returns `(train, test)`.
pub fn split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::domain(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let t0 = (d.n0 as f64 * test_fraction).round() as usize;
    let t1 = (d.n1 as f64 * test_fraction).round() as usize;
    split_counts(d, t0, t1, seed)
}
