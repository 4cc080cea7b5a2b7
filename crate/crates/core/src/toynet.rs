//! A small fully-connected classifier (`input -> l1 -> l2 -> 10`, ReLU)
//! trained with softmax cross-entropy on synthetic Gaussian clusters.
//!
//! All weights live in one flat vector so the optimizers in [`crate::optim`]
//! can update them directly. Matrices are stored column-major, layer by
//! layer: `W1 (l1 x in), b1, W2 (l2 x l1), b2, W3 (10 x l2), b3`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DVectorView};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{Config, Value};
use crate::util;

pub const NUM_CLASSES: usize = 10;
pub const DEFAULT_INPUT_DIM: usize = 20;
pub const DEFAULT_SAMPLES: usize = 1000;
/// Standard deviation of the class centers; samples have unit noise.
const CENTER_SCALE: f64 = 0.6;

/// Labelled samples, stored row-major (one contiguous row per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

/// A batch laid out for the network: one column per sample.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(input_dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(Error::Shape(format!(
                "{} features for {} labels of dimension {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::Shape(format!("label {bad} outside 0..{NUM_CLASSES}")));
        }
        Ok(Self {
            input_dim,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            features.extend_from_slice(self.sample(i));
        }
        Dataset {
            input_dim: self.input_dim,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let mut data = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Batch {
            x: DMatrix::from_vec(self.input_dim, indices.len(), data),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.input_dim {
            let _ = write!(out, "x{j},");
        }
        out.push_str("label\n");
        for i in 0..self.len() {
            for v in self.sample(i) {
                let _ = write!(out, "{v:?},");
            }
            let _ = writeln!(out, "{}", self.labels[i]);
        }
        out
    }
}

/// Draw `n` samples from ten Gaussian clusters and split them 80/20 into
/// train and test sets. Labels are balanced to within one per class.
pub fn generate_dataset(n: usize, input_dim: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n < 20 {
        return Err(Error::DatasetTooSmall(format!("need at least 20 samples, got {n}")));
    }
    if input_dim == 0 {
        return Err(Error::Shape("input_dim must be positive".into()));
    }
    let mut rng = util::rng(seed, 0xda7a);
    let centers: Vec<f64> = (0..NUM_CLASSES * input_dim)
        .map(|_| CENTER_SCALE * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % NUM_CLASSES).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * input_dim);
    for &label in &labels {
        let center = &centers[label * input_dim..(label + 1) * input_dim];
        features.extend(center.iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)));
    }
    let all = Dataset::new(input_dim, features, labels)?;
    let n_train = n * 4 / 5;
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..n).collect();
    Ok((all.subset(&train), all.subset(&test)))
}

/// Mean softmax cross-entropy over the columns of `logits`.
pub fn cross_entropy(logits: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (col, &label) in logits.column_iter().zip(labels) {
        total += log_sum_exp(col.as_slice()) - col[label];
    }
    total / labels.len() as f64
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Number of columns whose argmax (lowest index on ties) equals the label.
pub fn correct_count(logits: &DMatrix<f64>, labels: &[usize]) -> usize {
    assert_eq!(logits.ncols(), labels.len(), "one label per logit column");
    logits
        .column_iter()
        .zip(labels)
        .filter(|(col, &label)| argmax(col.as_slice()) == label)
        .count()
}

/// Fraction of correct argmax predictions; 0 for an empty batch.
pub fn accuracy(logits: &DMatrix<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    correct_count(logits, labels) as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    input_dim: usize,
    l1: usize,
    l2: usize,
    params: Vec<f64>,
}

/// On-disk weights: shapes plus the flat column-major vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightsFile {
    input_dim: usize,
    l1: usize,
    l2: usize,
    num_classes: usize,
    shapes: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

impl ToyNet {
    pub fn new(input_dim: usize, l1: usize, l2: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || l1 == 0 || l2 == 0 {
            return Err(Error::Shape(format!(
                "layer sizes must be positive: {input_dim}, {l1}, {l2}"
            )));
        }
        let mut net = Self {
            input_dim,
            l1,
            l2,
            params: Vec::new(),
        };
        net.reset_weights(seed);
        Ok(net)
    }

    fn layout(&self) -> Layout {
        let w1 = 0;
        let b1 = w1 + self.l1 * self.input_dim;
        let w2 = b1 + self.l1;
        let b2 = w2 + self.l2 * self.l1;
        let w3 = b2 + self.l2;
        let b3 = w3 + NUM_CLASSES * self.l2;
        Layout {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + NUM_CLASSES,
        }
    }

    /// Re-draw every weight and bias uniformly in `±1/sqrt(fan_in)`.
    pub fn reset_weights(&mut self, seed: u64) {
        let mut rng = util::rng(seed, 0x7e7);
        let layers = [(self.input_dim, self.l1), (self.l1, self.l2), (self.l2, NUM_CLASSES)];
        self.params.clear();
        for (fan_in, fan_out) in layers {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out + fan_out {
                self.params.push(rng.random_range(-bound..bound));
            }
        }
        debug_assert_eq!(self.params.len(), self.layout().len);
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn widths(&self) -> (usize, usize) {
        (self.l1, self.l2)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check(&self, batch: &Batch) -> Result<()> {
        if batch.x.nrows() != self.input_dim {
            return Err(Error::Shape(format!(
                "batch has {} features, network expects {}",
                batch.x.nrows(),
                self.input_dim
            )));
        }
        if batch.x.ncols() != batch.labels.len() {
            return Err(Error::Shape(format!(
                "{} samples but {} labels",
                batch.x.ncols(),
                batch.labels.len()
            )));
        }
        Ok(())
    }

    fn matrix(&self, offset: usize, rows: usize, cols: usize) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.params[offset..offset + rows * cols], rows, cols)
    }

    fn vector(&self, offset: usize, len: usize) -> DVectorView<'_, f64> {
        DVectorView::from_slice(&self.params[offset..offset + len], len)
    }

    fn affine(&self, w: usize, b: usize, rows: usize, cols: usize, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = self.matrix(w, rows, cols) * input;
        let bias = self.vector(b, rows);
        for mut col in z.column_iter_mut() {
            col += &bias;
        }
        z
    }

    /// Hidden activations and logits for a batch.
    fn activations(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let lay = self.layout();
        let h1 = self.affine(lay.w1, lay.b1, self.l1, self.input_dim, x).map(relu);
        let h2 = self.affine(lay.w2, lay.b2, self.l2, self.l1, &h1).map(relu);
        let z = self.affine(lay.w3, lay.b3, NUM_CLASSES, self.l2, &h2);
        (h1, h2, z)
    }

    /// Logits, one column per sample.
    pub fn forward(&self, batch: &Batch) -> Result<DMatrix<f64>> {
        self.check(batch)?;
        Ok(self.activations(&batch.x).2)
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        Ok(cross_entropy(&self.forward(batch)?, &batch.labels))
    }

    /// Mean cross-entropy and its gradient with respect to the flat weights.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        self.check(batch)?;
        if batch.labels.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let lay = self.layout();
        let x = &batch.x;
        let (h1, h2, z) = self.activations(x);
        let b = batch.labels.len() as f64;

        // d loss / d logits = (softmax - onehot) / b
        let mut dz = z.clone();
        let mut loss = 0.0;
        for (mut col, &label) in dz.column_iter_mut().zip(&batch.labels) {
            let lse = log_sum_exp(col.as_slice());
            loss += lse - col[label];
            col.apply(|v| *v = (*v - lse).exp() / b);
            col[label] -= 1.0 / b;
        }
        loss /= b;

        let mut grad = vec![0.0; lay.len];
        let mut put_layer = |w: usize, bias: usize, delta: &DMatrix<f64>, input: &DMatrix<f64>| {
            let gw = delta * input.transpose();
            grad[w..w + gw.len()].copy_from_slice(gw.as_slice());
            for (r, row) in delta.row_iter().enumerate() {
                grad[bias + r] = row.sum();
            }
        };

        put_layer(lay.w3, lay.b3, &dz, &h2);
        let mut d2 = self.matrix(lay.w3, NUM_CLASSES, self.l2).transpose() * &dz;
        d2.zip_apply(&h2, |d, h| {
            if h <= 0.0 {
                *d = 0.0
            }
        });
        put_layer(lay.w2, lay.b2, &d2, &h1);
        let mut d1 = self.matrix(lay.w2, self.l2, self.l1).transpose() * &d2;
        d1.zip_apply(&h1, |d, h| {
            if h <= 0.0 {
                *d = 0.0
            }
        });
        put_layer(lay.w1, lay.b1, &d1, x);
        Ok((loss, grad))
    }

    pub fn weights_json(&self) -> String {
        let file = WeightsFile {
            input_dim: self.input_dim,
            l1: self.l1,
            l2: self.l2,
            num_classes: NUM_CLASSES,
            shapes: vec![
                vec![self.l1, self.input_dim],
                vec![self.l1],
                vec![self.l2, self.l1],
                vec![self.l2],
                vec![NUM_CLASSES, self.l2],
                vec![NUM_CLASSES],
            ],
            weights: self.params.clone(),
        };
        serde_json::to_string(&file).expect("weights serialize")
    }

    pub fn from_weights_json(text: &str) -> Result<Self> {
        let file: WeightsFile = serde_json::from_str(text)?;
        if file.num_classes != NUM_CLASSES {
            return Err(Error::Shape(format!(
                "expected {NUM_CLASSES} classes, got {}",
                file.num_classes
            )));
        }
        let mut net = Self::new(file.input_dim, file.l1, file.l2, 0)?;
        if file.weights.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "{} weights for a network with {}",
                file.weights.len(),
                net.params.len()
            )));
        }
        if file.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Shape("non-finite weight".into()));
        }
        net.params = file.weights;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::atomic_write(path, self.weights_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_weights_json(&text)
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// The network hyperparameters in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub l1: usize,
    pub l2: usize,
    pub lr_mult: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub k_folds: usize,
    pub patience: usize,
    pub optimizer: String,
    pub sgd_momentum: f64,
}

impl HyperConfig {
    pub fn from_config(config: &Config) -> Result<Self> {
        let get = |name: &str| {
            config
                .get(name)
                .ok_or_else(|| Error::InvalidConfig(format!("configuration lacks `{name}`")))
        };
        let count = |name: &str, min: i64| -> Result<usize> {
            match get(name)?.as_i64() {
                Some(v) if v >= min => Ok(v as usize),
                _ => Err(Error::InvalidConfig(format!(
                    "`{name}` must be an integer >= {min}, got {}",
                    get(name)?
                ))),
            }
        };
        let real = |name: &str| -> Result<f64> {
            get(name)?
                .as_f64()
                .ok_or_else(|| Error::InvalidConfig(format!("`{name}` must be numeric")))
        };
        let optimizer = match get("optimizer")? {
            Value::Level(s) => s.clone(),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "`optimizer` must be a level, got {other}"
                )))
            }
        };
        Ok(Self {
            l1: count("l1", 1)?,
            l2: count("l2", 1)?,
            lr_mult: real("lr_mult")?,
            batch_size: count("batch_size", 1)?,
            epochs: count("epochs", 1)?,
            k_folds: count("k_folds", 0)?,
            patience: count("patience", 1)?,
            optimizer,
            sgd_momentum: real("sgd_momentum")?,
        })
    }
}
