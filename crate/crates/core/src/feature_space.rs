//! Softmax representations of covariates.
//!
//! Every test in this crate works on low-dimensional probability vectors
//! produced by a label classifier. This module holds the validated vector
//! type, the sample containers, a multinomial softmax-regression reducer
//! trained by full-batch gradient descent, and CSV ingestion for vectors
//! produced elsewhere.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of a vector's sum from 1.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// An `L`-dimensional probability vector, `L >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SoftmaxVector(Vec<f64>);

impl SoftmaxVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "softmax vector needs at least 2 entries, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidInput(format!(
                "entry {} = {v} is outside [0, 1]",
                i + 1
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "entries sum to {sum}, not 1 within {SUM_TOLERANCE}"
            )));
        }
        Ok(SoftmaxVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Class label: index of the largest entry, smallest index on ties.
    pub fn argmax_class(&self) -> usize {
        argmax_class(&self.0)
    }

    /// Largest entry (the confidence of the predicted class).
    pub fn max_value(&self) -> f64 {
        self.0[self.argmax_class()]
    }
}

impl TryFrom<Vec<f64>> for SoftmaxVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        SoftmaxVector::new(values)
    }
}

impl From<SoftmaxVector> for Vec<f64> {
    fn from(v: SoftmaxVector) -> Self {
        v.0
    }
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax_class(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Source,
    Target,
}

/// Nonempty collection of softmax vectors drawn from one distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    vectors: Vec<SoftmaxVector>,
    origin: Origin,
}

impl SampleSet {
    pub fn new(vectors: Vec<SoftmaxVector>, origin: Origin) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::InvalidInput("sample set is empty".into()))?;
        let dim = first.dim();
        if let Some(i) = vectors.iter().position(|v| v.dim() != dim) {
            return Err(Error::InvalidInput(format!(
                "vector {i} has dimension {}, expected {dim}",
                vectors[i].dim()
            )));
        }
        Ok(SampleSet { vectors, origin })
    }

    /// Builds a set from raw rows, validating each one.
    pub fn from_rows(rows: Vec<Vec<f64>>, origin: Origin) -> Result<Self> {
        let vectors = rows
            .into_iter()
            .map(SoftmaxVector::new)
            .collect::<Result<Vec<_>>>()?;
        SampleSet::new(vectors, origin)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn vectors(&self) -> &[SoftmaxVector] {
        &self.vectors
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SoftmaxVector> {
        self.vectors.iter()
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCheckpoint {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            iterations: 20_000,
            seed: 0,
        }
    }
}

/// Number of loss checkpoints recorded over a training run.
pub const LOSS_CHECKPOINTS: usize = 80;

/// Linear logits followed by softmax: `f(x) = softmax(x W + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducerModel {
    input_dim: usize,
    classes: usize,
    /// Row-major `input_dim x classes`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    trace: Vec<LossCheckpoint>,
}

impl ReducerModel {
    pub fn from_parts(input_dim: usize, classes: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if classes < 2 || input_dim == 0 {
            return Err(Error::InvalidInput(format!(
                "reducer needs input_dim >= 1 and classes >= 2, got {input_dim} and {classes}"
            )));
        }
        if weights.len() != input_dim * classes || bias.len() != classes {
            return Err(Error::InvalidInput("weight or bias shape mismatch".into()));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite model parameter".into()));
        }
        Ok(ReducerModel {
            input_dim,
            classes,
            weights,
            bias,
            trace: Vec::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn loss_trace(&self) -> &[LossCheckpoint] {
        &self.trace
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (c, &xc) in x.iter().enumerate() {
            let row = &self.weights[c * self.classes..(c + 1) * self.classes];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xc * w;
            }
        }
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.classes];
        self.logits_into(x, &mut z);
        softmax_in_place(&mut z);
        z
    }

    fn check_features(&self, features: &[Vec<f64>]) -> Result<()> {
        for (i, x) in features.iter().enumerate() {
            if x.len() != self.input_dim {
                return Err(Error::InvalidInput(format!(
                    "feature row {i} has dimension {}, model expects {}",
                    x.len(),
                    self.input_dim
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("feature row {i} is not finite")));
            }
        }
        Ok(())
    }

    /// Maps each feature row to its softmax vector, preserving order.
    pub fn reduce(&self, features: &[Vec<f64>], origin: Origin) -> Result<SampleSet> {
        self.check_features(features)?;
        let vectors = features
            .iter()
            .map(|x| SoftmaxVector::new(self.probabilities(x)))
            .collect::<Result<Vec<_>>>()?;
        SampleSet::new(vectors, origin)
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax_class(&self.probabilities(x))
    }

    /// Fraction of rows whose argmax prediction equals the label.
    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        let hits = features
            .iter()
            .zip(labels)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        hits as f64 / features.len().max(1) as f64
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Fits a softmax-regression reducer with full-batch gradient descent on
/// the mean cross-entropy loss.
///
/// Weights start from `N(0, 0.01^2)` draws seeded by `cfg.seed`. The loss is
/// recorded every `iterations / 80` updates.
pub fn train_reducer(features: &[Vec<f64>], labels: &[usize], cfg: &TrainConfig) -> Result<ReducerModel> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "need matching nonempty features and labels, got {} and {}",
            features.len(),
            labels.len()
        )));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) || cfg.iterations == 0 {
        return Err(Error::InvalidInput(
            "learning rate must be positive and iterations at least 1".into(),
        ));
    }
    let input_dim = features[0].len();
    if input_dim == 0 {
        return Err(Error::InvalidInput("feature dimension is zero".into()));
    }
    for (i, x) in features.iter().enumerate() {
        if x.len() != input_dim {
            return Err(Error::InvalidInput(format!(
                "feature row {i} has dimension {}, expected {input_dim}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("feature row {i} is not finite")));
        }
    }
    let mut seen: Vec<usize> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::DegenerateLabels { found: seen.len() });
    }
    let classes = seen[seen.len() - 1] + 1;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let weights: Vec<f64> = (0..input_dim * classes).map(|_| init.sample(&mut rng)).collect();
    let mut model = ReducerModel::from_parts(input_dim, classes, weights, vec![0.0; classes])?;

    let step = (cfg.iterations / LOSS_CHECKPOINTS).max(1);
    let scale = 1.0 / features.len() as f64;
    let mut grad_w = vec![0.0; input_dim * classes];
    let mut grad_b = vec![0.0; classes];
    let mut z = vec![0.0; classes];
    let mut trace = Vec::with_capacity(LOSS_CHECKPOINTS + 1);

    for t in 0..=cfg.iterations {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        grad_b.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            model.logits_into(x, &mut z);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_norm = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += log_norm - z[y];
            for (l, v) in z.iter_mut().enumerate() {
                *v = (*v - log_norm).exp() - if l == y { 1.0 } else { 0.0 };
            }
            for (c, &xc) in x.iter().enumerate() {
                let row = &mut grad_w[c * classes..(c + 1) * classes];
                for (g, d) in row.iter_mut().zip(&z) {
                    *g += xc * d;
                }
            }
            for (g, d) in grad_b.iter_mut().zip(&z) {
                *g += d;
            }
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::InvalidInput(format!(
                "training diverged at iteration {t}; lower the learning rate"
            )));
        }
        if t > 0 && t % step == 0 {
            trace.push(LossCheckpoint { iteration: t, loss });
        }
        if t == cfg.iterations {
            break;
        }
        let lr = cfg.learning_rate * scale;
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= lr * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&grad_b) {
            *b -= lr * g;
        }
    }
    model.trace = trace;
    Ok(model)
}

/// Reads a softmax CSV with header `y1,...,yL[,label]`.
///
/// Rows keep their file order. Values are stored exactly as parsed; a row
/// violating the vector invariants is rejected with its 1-based data row
/// number. The optional label column is ignored.
pub fn load_softmax_csv(path: impl AsRef<Path>, origin: Origin) -> Result<SampleSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |row: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        reason,
    };

    let headers = reader.headers().map_err(|e| parse_err(0, e.to_string()))?.clone();
    let mut dim = 0;
    for (i, name) in headers.iter().enumerate() {
        if name == format!("y{}", i + 1) {
            dim = i + 1;
        } else if name == "label" && i == headers.len() - 1 && dim > 0 {
            break;
        } else {
            return Err(parse_err(0, format!("unexpected header column {name:?}")));
        }
    }
    if dim < 2 {
        return Err(parse_err(0, "header must name at least y1,y2".into()));
    }

    let mut vectors = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| parse_err(row, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(parse_err(
                row,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let values = record
            .iter()
            .take(dim)
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(row, format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let v = SoftmaxVector::new(values).map_err(|e| parse_err(row, e.to_string()))?;
        vectors.push(v);
    }
    if vectors.is_empty() {
        return Err(parse_err(0, "file has no data rows".into()));
    }
    SampleSet::new(vectors, origin)
}

/// Writes `set` in the format read by [`load_softmax_csv`], with the argmax
/// class appended as a `label` column. Values use the shortest decimal form
/// that parses back to the same `f64`.
pub fn save_softmax_csv(set: &SampleSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        let header: Vec<String> = (1..=set.dim()).map(|i| format!("y{i}")).collect();
        writeln!(out, "{},label", header.join(","))?;
        for v in set.iter() {
            for x in v.as_slice() {
                write!(out, "{x},")?;
            }
            writeln!(out, "{}", v.argmax_class())?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}
