//! Training and evaluation procedures for the built-in network: hold-out
//! and k-fold evaluation with early stopping, final train/test of a tuned
//! configuration, and an out-of-process evaluator protocol.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, OptimizerConfig, OptimizerState};
use crate::space::Config;
use crate::toynet::{self, Dataset, HyperConfig, ToyNet};
use crate::util;

/// Global gradient norm limit applied before every optimizer step.
pub const MAX_GRAD_NORM: f64 = 1.0;

const SPLIT_STREAM: u64 = 0x5917;
const SHUFFLE_STREAM: u64 = 0x5a0f;
const FOLD_STREAM: u64 = 0xf01d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSetting {
    /// 60/40 split of the training data.
    TrainHoldOut,
    /// Train on the training data, validate on the test data.
    TestHoldOut,
    /// k-fold cross-validation on the training data.
    TrainCv,
    /// k-fold cross-validation on the test data.
    TestCv,
}

impl EvalSetting {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalSetting::TrainHoldOut => "train_hold_out",
            EvalSetting::TestHoldOut => "test_hold_out",
            EvalSetting::TrainCv => "train_cv",
            EvalSetting::TestCv => "test_cv",
        }
    }
}

impl fmt::Display for EvalSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            EvalSetting::TrainHoldOut,
            EvalSetting::TestHoldOut,
            EvalSetting::TrainCv,
            EvalSetting::TestCv,
        ]
        .into_iter()
        .find(|e| e.as_str() == s)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown eval setting `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub loss: f64,
    pub metric: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

impl EvalResult {
    pub fn new(loss: f64, metric: f64) -> Self {
        Self {
            loss,
            metric,
            epochs_run: 0,
            stopped_early: false,
        }
    }
}

/// Random 60/40 partition of `0..n` into training and validation indices.
pub fn create_train_val_split(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 5 {
        return Err(Error::DatasetTooSmall(format!(
            "hold-out split needs at least 5 samples, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut util::rng(seed, SPLIT_STREAM));
    let val = idx.split_off(n * 6 / 10);
    Ok((idx, val))
}

/// Split `0..n` into `k` contiguous folds (after an optional seeded
/// permutation). The first `n % k` folds hold one extra index.
pub fn kfold_partition(n: usize, k: usize, shuffle: bool, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "cross-validation needs k_folds >= 2, got {k}"
        )));
    }
    if n < k {
        return Err(Error::DatasetTooSmall(format!("{n} samples cannot fill {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if shuffle {
        idx.shuffle(&mut util::rng(seed, FOLD_STREAM));
    }
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        folds.push(idx[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

/// What one epoch of training and validation means. The network trainer is
/// the real implementation; tests substitute scripted sequences.
pub trait EpochRunner {
    /// Train for one epoch, returning the last batch loss.
    fn train_epoch(&mut self) -> Result<f64>;
    /// Validate, returning `(metric, loss)`.
    fn validate(&mut self) -> Result<(f64, f64)>;
    /// Called when the validation loss improves on the best so far.
    fn on_improvement(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Run up to `epochs` epochs with patience-based early stopping and return
/// the validation loss and metric of the last epoch run (not the best).
pub fn run_epochs(runner: &mut dyn EpochRunner, epochs: usize, patience: usize) -> Result<EvalResult> {
    let mut best = f64::INFINITY;
    let mut counter = 0;
    let mut last = None;
    for epoch in 1..=epochs {
        runner.train_epoch()?;
        let (metric, loss) = runner.validate()?;
        if !loss.is_finite() {
            return Err(Error::Evaluation(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        let mut stop = false;
        if loss < best {
            best = loss;
            counter = 0;
            runner.on_improvement()?;
        } else {
            counter += 1;
            stop = counter >= patience;
        }
        last = Some(EvalResult {
            loss,
            metric,
            epochs_run: epoch,
            stopped_early: stop && epoch < epochs,
        });
        if stop {
            break;
        }
    }
    last.ok_or_else(|| Error::InvalidConfig("epochs must be at least 1".into()))
}

fn batches(indices: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    indices.chunks(batch_size.max(1))
}

/// One pass over shuffled mini-batches: gradient, global-norm clip, step.
/// Returns the loss of the final batch.
pub fn train_one_epoch(
    net: &mut ToyNet,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
    config: &OptimizerConfig,
    state: &mut OptimizerState,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    let mut order = indices.to_vec();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    let mut last = f64::NAN;
    for chunk in batches(&order, batch_size) {
        let batch = data.batch(chunk);
        let (loss, mut grad) = net.loss_and_grad(&batch)?;
        if !loss.is_finite() {
            return Err(Error::Evaluation("non-finite training loss".into()));
        }
        optim::clip_grad_norm(&mut grad, MAX_GRAD_NORM);
        optim::step(config, state, net.params_mut(), &grad)?;
        last = loss;
    }
    Ok(last)
}

/// Returns `(accuracy, mean batch loss)`; accuracy is accumulated over all
/// batches and computed once.
pub fn validate_one_epoch(net: &ToyNet, data: &Dataset, indices: &[usize], batch_size: usize) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(Error::Evaluation("empty validation set".into()));
    }
    let mut loss_sum = 0.0;
    let mut steps = 0usize;
    let mut correct = 0usize;
    for chunk in batches(indices, batch_size) {
        let batch = data.batch(chunk);
        let logits = net.forward(&batch)?;
        loss_sum += toynet::cross_entropy(&logits, &batch.labels);
        correct += toynet::correct_count(&logits, &batch.labels);
        steps += 1;
    }
    Ok((correct as f64 / indices.len() as f64, loss_sum / steps as f64))
}

struct NetRunner<'a> {
    net: &'a mut ToyNet,
    optimizer: OptimizerConfig,
    state: OptimizerState,
    train: &'a Dataset,
    train_idx: Vec<usize>,
    val: &'a Dataset,
    val_idx: Vec<usize>,
    batch_size: usize,
    rng: Option<ChaCha8Rng>,
    checkpoint: Option<&'a Path>,
}

impl<'a> NetRunner<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        net: &'a mut ToyNet,
        hyper: &HyperConfig,
        train: &'a Dataset,
        train_idx: Vec<usize>,
        val: &'a Dataset,
        val_idx: Vec<usize>,
        shuffle: bool,
        seed: u64,
    ) -> Result<Self> {
        let optimizer = optim::optimizer_handler(&hyper.optimizer, hyper.lr_mult, hyper.sgd_momentum)?;
        let state = OptimizerState::new(&optimizer, net.num_params());
        Ok(Self {
            net,
            optimizer,
            state,
            train,
            train_idx,
            val,
            val_idx,
            batch_size: hyper.batch_size,
            rng: shuffle.then(|| util::rng(seed, SHUFFLE_STREAM)),
            checkpoint: None,
        })
    }
}

impl EpochRunner for NetRunner<'_> {
    fn train_epoch(&mut self) -> Result<f64> {
        train_one_epoch(
            self.net,
            self.train,
            &self.train_idx,
            self.batch_size,
            &self.optimizer,
            &mut self.state,
            self.rng.as_mut(),
        )
    }

    fn validate(&mut self) -> Result<(f64, f64)> {
        validate_one_epoch(self.net, self.val, &self.val_idx, self.batch_size)
    }

    fn on_improvement(&mut self) -> Result<()> {
        match self.checkpoint {
            Some(path) => self.net.save(path),
            None => Ok(()),
        }
    }
}

fn hold_out(
    net: &mut ToyNet,
    hyper: &HyperConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    shuffle: bool,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<EvalResult> {
    let (train_idx, val, val_idx) = match test {
        Some(test) => ((0..train.len()).collect(), test, (0..test.len()).collect()),
        None => {
            let (t, v) = create_train_val_split(train.len(), seed)?;
            (t, train, v)
        }
    };
    let mut runner = NetRunner::new(net, hyper, train, train_idx, val, val_idx, shuffle, seed)?;
    runner.checkpoint = checkpoint;
    run_epochs(&mut runner, hyper.epochs, hyper.patience)
}

/// Hold-out evaluation. Without `test`, the training data is split 60/40;
/// with it, the whole training set is used and `test` validates.
pub fn evaluate_hold_out(
    hyper: &HyperConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    shuffle: bool,
    seed: u64,
) -> Result<EvalResult> {
    let mut net = ToyNet::new(train.input_dim(), hyper.l1, hyper.l2, seed)?;
    hold_out(&mut net, hyper, train, test, shuffle, seed, None)
}

/// k-fold cross-validation. Every fold starts from the same seeded weights
/// and a fresh optimizer; the result is the mean of the per-fold last-epoch
/// losses and metrics. `epochs_run` is summed over folds.
pub fn evaluate_cv(
    hyper: &HyperConfig,
    data: &Dataset,
    k_folds: usize,
    shuffle: bool,
    seed: u64,
) -> Result<EvalResult> {
    let folds = kfold_partition(data.len(), k_folds, shuffle, seed)?;
    let mut net = ToyNet::new(data.input_dim(), hyper.l1, hyper.l2, seed)?;
    let mut total = EvalResult::new(0.0, 0.0);
    for (f, val_idx) in folds.iter().enumerate() {
        net.reset_weights(seed);
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();
        let mut runner = NetRunner::new(&mut net, hyper, data, train_idx, data, val_idx.clone(), shuffle, seed)?;
        let r = run_epochs(&mut runner, hyper.epochs, hyper.patience)
            .map_err(|e| Error::Evaluation(format!("fold {}: {e}", f + 1)))?;
        total.loss += r.loss;
        total.metric += r.metric;
        total.epochs_run += r.epochs_run;
        total.stopped_early |= r.stopped_early;
    }
    total.loss /= k_folds as f64;
    total.metric /= k_folds as f64;
    Ok(total)
}

/// Evaluate `hyper` under one of the four settings.
pub fn evaluate(
    hyper: &HyperConfig,
    setting: EvalSetting,
    train: &Dataset,
    test: &Dataset,
    shuffle: bool,
    seed: u64,
) -> Result<EvalResult> {
    match setting {
        EvalSetting::TrainHoldOut => evaluate_hold_out(hyper, train, None, shuffle, seed),
        EvalSetting::TestHoldOut => evaluate_hold_out(hyper, train, Some(test), shuffle, seed),
        EvalSetting::TrainCv => evaluate_cv(hyper, train, hyper.k_folds, shuffle, seed),
        EvalSetting::TestCv => evaluate_cv(hyper, test, hyper.k_folds, shuffle, seed),
    }
}

/// Train a tuned configuration with a 60/40 hold-out split, saving the
/// weights to `save_path` whenever the validation loss improves. Returns
/// the network as of the last epoch.
pub fn train_tuned(
    hyper: &HyperConfig,
    train: &Dataset,
    shuffle: bool,
    seed: u64,
    save_path: Option<&Path>,
) -> Result<(ToyNet, EvalResult)> {
    let mut net = ToyNet::new(train.input_dim(), hyper.l1, hyper.l2, seed)?;
    let result = hold_out(&mut net, hyper, train, None, shuffle, seed, save_path)?;
    Ok((net, result))
}

/// One unshuffled validation pass over the whole test set.
pub fn test_tuned(net: &ToyNet, test: &Dataset, batch_size: usize) -> Result<EvalResult> {
    let idx: Vec<usize> = (0..test.len()).collect();
    let (metric, loss) = validate_one_epoch(net, test, &idx, batch_size)?;
    Ok(EvalResult::new(loss, metric))
}

/// Like [`test_tuned`], reading weights from a checkpoint file.
pub fn test_tuned_from_file(path: &Path, test: &Dataset, batch_size: usize) -> Result<EvalResult> {
    test_tuned(&ToyNet::load(path)?, test, batch_size)
}

#[derive(Deserialize)]
struct Reply {
    loss: f64,
    #[serde(default)]
    metric: Option<f64>,
}

/// Evaluate `config` in a child process run through `sh -c`. The child gets
/// one JSON line `{"config": {...}}` on stdin and must print one JSON line
/// `{"loss": .., "metric": ..}` and exit successfully within `timeout`.
pub fn external_evaluate(command: &str, config: &Config, timeout: Duration) -> Result<EvalResult> {
    let fail = |msg: String| Error::Evaluation(format!("`{command}`: {msg}"));
    let deadline = Instant::now() + timeout;
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| fail(format!("cannot launch: {e}")))?;

    let request = format!("{{\"config\":{}}}\n", config.to_json());
    if let Some(mut stdin) = child.stdin.take() {
        // A child that exits without reading its input is not an error here.
        let _ = stdin.write_all(request.as_bytes());
    }
    let mut stdout = child.stdout.take().expect("stdout is piped");
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut out = String::new();
        let res = stdout.read_to_string(&mut out).map(|_| out);
        let _ = tx.send(res);
    });

    let remaining = deadline.saturating_duration_since(Instant::now());
    let output = match rx.recv_timeout(remaining) {
        Ok(Ok(out)) => out,
        Ok(Err(e)) => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(fail(format!("reading output: {e}")));
        }
        Err(_) => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(fail(format!("timed out after {timeout:?}")));
        }
    };
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| fail(e.to_string()))? {
            break status;
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Err(fail(format!("timed out after {timeout:?}")));
        }
        std::thread::sleep(Duration::from_millis(2));
    };
    if !status.success() {
        return Err(fail(format!("exited with {status}")));
    }
    let line = output
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| fail("no reply".into()))?;
    let reply: Reply = serde_json::from_str(line).map_err(|e| fail(format!("malformed reply: {e}")))?;
    if !reply.loss.is_finite() {
        return Err(fail("non-finite loss".into()));
    }
    Ok(EvalResult::new(reply.loss, reply.metric.unwrap_or(f64::NAN)))
}
