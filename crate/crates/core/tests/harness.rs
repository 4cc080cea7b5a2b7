use std::time::{Duration, Instant};

use proptest::prelude::*;
use spotkit::harness::{self, EpochRunner, EvalResult};
use spotkit::optim::{self, OptimizerState};
use spotkit::toynet::{self, Dataset};
use spotkit::{Config, Error, HyperConfig, ToyNet, Value};

fn hyper(optimizer: &str, epochs: usize, patience: usize) -> HyperConfig {
    HyperConfig {
        l1: 16,
        l2: 8,
        lr_mult: 1.0,
        batch_size: 16,
        epochs,
        k_folds: 3,
        patience,
        optimizer: optimizer.into(),
        sgd_momentum: 0.9,
    }
}

fn data(n: usize) -> (Dataset, Dataset) {
    toynet::generate_dataset(n, 8, 11).unwrap()
}

struct Scripted(Vec<f64>, usize);

impl EpochRunner for Scripted {
    fn train_epoch(&mut self) -> spotkit::Result<f64> {
        self.1 += 1;
        Ok(0.0)
    }

    fn validate(&mut self) -> spotkit::Result<(f64, f64)> {
        Ok((0.0, self.0[self.1 - 1]))
    }
}

#[test]
fn scripted_early_stopping_returns_last_not_best() {
    let r = harness::run_epochs(&mut Scripted(vec![3.0, 2.0, 2.5, 2.6, 2.7], 0), 5, 3).unwrap();
    assert_eq!((r.epochs_run, r.loss), (5, 2.7));
    // The trigger fires on the final epoch, so nothing was cut short.
    assert!(!r.stopped_early);
    let r = harness::run_epochs(&mut Scripted(vec![3.0, 2.0, 2.5, 2.6, 2.7, 1.0], 0), 6, 3).unwrap();
    assert_eq!((r.epochs_run, r.loss, r.stopped_early), (5, 2.7, true));
}

#[test]
fn split_examples() {
    let (t, v) = harness::create_train_val_split(50_000, 1).unwrap();
    assert_eq!((t.len(), v.len()), (30_000, 20_000));
    let mut all = [t, v].concat();
    all.sort_unstable();
    assert_eq!(all, (0..50_000).collect::<Vec<_>>());
}

#[test]
fn clip_examples() {
    let mut g = [3.0, 4.0, 0.0];
    let norm = optim::clip_grad_norm(&mut g, 1.0);
    assert_eq!(norm, 5.0);
    assert!((g.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
    let mut small = [0.3, 0.4];
    optim::clip_grad_norm(&mut small, 1.0);
    assert_eq!(small, [0.3, 0.4]);
}

#[test]
fn one_sgd_epoch_lowers_the_full_loss() {
    let (train, _) = data(500);
    let mut net = ToyNet::new(8, 16, 8, 2).unwrap();
    let all: Vec<usize> = (0..train.len()).collect();
    let full = train.batch(&all);
    let before = net.loss(&full).unwrap();
    let cfg = optim::optimizer_handler("SGD", 1.0, 0.0).unwrap();
    let mut state = OptimizerState::new(&cfg, net.num_params());
    harness::train_one_epoch(&mut net, &train, &all, 8, &cfg, &mut state, None).unwrap();
    assert!(net.loss(&full).unwrap() < before);
}

#[test]
fn validation_mean_matches_manual_accumulation() {
    let (train, _) = data(100);
    let net = ToyNet::new(8, 5, 4, 7).unwrap();
    let idx: Vec<usize> = (0..25).collect();
    let (acc, loss) = harness::validate_one_epoch(&net, &train, &idx, 10).unwrap();
    let chunks = [&idx[0..10], &idx[10..20], &idx[20..25]];
    let manual = chunks.iter().map(|c| net.loss(&train.batch(c)).unwrap()).sum::<f64>() / 3.0;
    let correct: usize = chunks
        .iter()
        .map(|c| {
            let b = train.batch(c);
            toynet::correct_count(&net.forward(&b).unwrap(), &b.labels)
        })
        .sum();
    assert!((loss - manual).abs() < 1e-12);
    assert_eq!(acc, correct as f64 / 25.0);
    assert!(harness::validate_one_epoch(&net, &train, &[], 10).is_err());
}

/// Cross-validation written out with the public building blocks.
fn manual_cv(h: &HyperConfig, data: &Dataset, k: usize, seed: u64) -> (f64, f64) {
    let folds = harness::kfold_partition(data.len(), k, false, seed).unwrap();
    let (mut loss, mut metric) = (0.0, 0.0);
    for (f, val) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, v)| v.clone())
            .collect();
        let mut net = ToyNet::new(data.input_dim(), h.l1, h.l2, seed).unwrap();
        let cfg = optim::optimizer_handler(&h.optimizer, h.lr_mult, h.sgd_momentum).unwrap();
        let mut state = OptimizerState::new(&cfg, net.num_params());
        let (mut best, mut counter, mut last) = (f64::INFINITY, 0, (0.0, 0.0));
        for _ in 0..h.epochs {
            harness::train_one_epoch(&mut net, data, &train, h.batch_size, &cfg, &mut state, None).unwrap();
            last = harness::validate_one_epoch(&net, data, val, h.batch_size).unwrap();
            if last.1 < best {
                best = last.1;
                counter = 0;
            } else {
                counter += 1;
                if counter >= h.patience {
                    break;
                }
            }
        }
        metric += last.0;
        loss += last.1;
    }
    (loss / k as f64, metric / k as f64)
}

#[test]
fn cross_validation_matches_manual_loop() {
    let (train, _) = data(120);
    let h = hyper("Adam", 4, 2);
    let r = harness::evaluate_cv(&h, &train, 3, false, 5).unwrap();
    let (loss, metric) = manual_cv(&h, &train, 3, 5);
    assert_eq!(r.loss, loss);
    assert_eq!(r.metric, metric);
}

#[test]
fn reset_restores_the_fold_start() {
    let (train, _) = data(100);
    let fresh = ToyNet::new(8, 16, 8, 3).unwrap();
    let mut net = fresh.clone();
    let cfg = optim::optimizer_handler("Adam", 1.0, 0.0).unwrap();
    let mut state = OptimizerState::new(&cfg, net.num_params());
    let idx: Vec<usize> = (0..train.len()).collect();
    harness::train_one_epoch(&mut net, &train, &idx, 8, &cfg, &mut state, None).unwrap();
    assert_ne!(net.weights_json(), fresh.weights_json());
    net.reset_weights(3);
    assert_eq!(net.weights_json(), fresh.weights_json());
}

#[test]
fn tuned_model_passes_the_test_threshold() {
    let (train, test) = toynet::generate_dataset(1000, 20, 0).unwrap();
    let h = HyperConfig {
        l1: 64,
        l2: 64,
        lr_mult: 1.0,
        batch_size: 4,
        epochs: 8,
        k_folds: 0,
        patience: 3,
        optimizer: "Adam".into(),
        sgd_momentum: 0.9,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    harness::train_tuned(&h, &train, true, 123, Some(&path)).unwrap();
    let a = harness::test_tuned_from_file(&path, &test, h.batch_size).unwrap();
    let b = harness::test_tuned_from_file(&path, &test, h.batch_size).unwrap();
    assert_eq!(a, b);
    assert!(a.metric > 0.60, "test accuracy {}", a.metric);
    assert!(harness::test_tuned_from_file(&dir.path().join("missing.json"), &test, 4).is_err());
}

#[test]
fn hold_out_is_deterministic_per_seed() {
    let (train, test) = data(200);
    let h = hyper("RMSprop", 3, 5);
    let a = harness::evaluate(&h, spotkit::EvalSetting::TrainHoldOut, &train, &test, true, 1).unwrap();
    let b = harness::evaluate(&h, spotkit::EvalSetting::TrainHoldOut, &train, &test, true, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.epochs_run, 3);
    let t = harness::evaluate(&h, spotkit::EvalSetting::TestCv, &train, &test, true, 1).unwrap();
    assert_eq!(t.epochs_run, 9);
}

fn config() -> Config {
    let mut c = Config::new();
    c.insert("x1", Value::Float(1.5));
    c.insert("x2", Value::Float(-0.25));
    c.insert("n", Value::Int(4));
    c.insert("kernel", Value::Level("rbf".into()));
    c
}

const LONG: Duration = Duration::from_secs(20);

#[test]
fn external_protocol_round_trip() {
    let cmd = r#"read line; echo '{"loss": 1.5, "metric": 0.5}'"#;
    assert_eq!(
        harness::external_evaluate(cmd, &config(), LONG).unwrap(),
        EvalResult::new(1.5, 0.5)
    );
}

#[test]
fn external_child_sums_the_numeric_values() {
    let cmd = r#"awk -F'[:,{}]' '{s=0; for(i=1;i<=NF;i++) if ($i ~ /^-?[0-9.]+([eE][-+]?[0-9]+)?$/) s+=$i; printf "{\"loss\": %.17g}\n", s}'"#;
    let r = harness::external_evaluate(cmd, &config(), LONG).unwrap();
    let expected: f64 = config().iter().filter_map(|(_, v)| v.as_f64()).sum();
    assert_eq!(r.loss, expected);
    assert!(r.metric.is_nan());
}

#[test]
fn external_failures() {
    for cmd in [
        "read line; echo garbage",
        "read line; exit 3",
        "read line",
        "read line; echo '{\"loss\": NaN}'",
    ] {
        assert!(
            matches!(
                harness::external_evaluate(cmd, &config(), LONG),
                Err(Error::Evaluation(_))
            ),
            "{cmd}"
        );
    }
    let start = Instant::now();
    let r = harness::external_evaluate("exec sleep 10", &config(), Duration::from_millis(200));
    assert!(r.is_err());
    assert!(start.elapsed() < Duration::from_secs(5));
}

proptest! {
    #[test]
    fn folds_partition_with_balanced_sizes(n in 2usize..300, k in 2usize..12, shuffle: bool, seed: u64) {
        prop_assume!(n >= k);
        let folds = harness::kfold_partition(n, k, shuffle, seed).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn early_stopping_fires_at_patience(losses in prop::collection::vec(0.0f64..10.0, 1..20), patience in 1usize..6) {
        let epochs = losses.len();
        let r = harness::run_epochs(&mut Scripted(losses.clone(), 0), epochs, patience).unwrap();
        let (mut best, mut counter, mut expected) = (f64::INFINITY, 0, epochs);
        for (i, l) in losses.iter().enumerate() {
            if *l < best {
                best = *l;
                counter = 0;
            } else {
                counter += 1;
                if counter >= patience {
                    expected = i + 1;
                    break;
                }
            }
        }
        prop_assert_eq!(r.epochs_run, expected);
        prop_assert_eq!(r.loss, losses[expected - 1]);
    }
}
