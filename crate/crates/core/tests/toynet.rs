use nalgebra::DMatrix;
use proptest::prelude::*;
use spotkit::toynet::{self, generate_dataset, NUM_CLASSES};
use spotkit::ToyNet;

#[test]
fn partition_sizes() {
    let (train, test) = generate_dataset(100, 20, 1).unwrap();
    assert_eq!((train.len(), test.len()), (80, 20));
    assert!(generate_dataset(19, 20, 1).is_err());
}

#[test]
fn same_seed_same_bytes() {
    let a = generate_dataset(200, 6, 9).unwrap();
    let b = generate_dataset(200, 6, 9).unwrap();
    assert_eq!(a.0.to_csv(), b.0.to_csv());
    assert_eq!(a.1.to_csv(), b.1.to_csv());
    let c = generate_dataset(200, 6, 10).unwrap();
    assert_ne!(a.0.to_csv(), c.0.to_csv());
}

#[test]
fn labels_are_balanced() {
    let (train, test) = generate_dataset(1000, 20, 4).unwrap();
    let mut counts = [0usize; NUM_CLASSES];
    for &l in train.labels().iter().chain(test.labels()) {
        counts[l] += 1;
    }
    assert!(counts.iter().all(|&c| (99..=101).contains(&c)), "{counts:?}");
}

#[test]
fn csv_has_header_and_one_row_per_sample() {
    let (train, _) = generate_dataset(50, 3, 0).unwrap();
    let csv = train.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "x0,x1,x2,label");
    assert_eq!(lines.count(), train.len());
}

#[test]
fn gradient_check_on_five_seeds() {
    let h = 1e-5;
    for seed in 0..5 {
        let (data, _) = generate_dataset(40, 5, seed).unwrap();
        let net = ToyNet::new(5, 7, 4, seed).unwrap();
        let idx: Vec<usize> = (0..9).collect();
        let batch = data.batch(&idx);
        let (_, grad) = net.loss_and_grad(&batch).unwrap();
        let mut probe = net.clone();
        let mut worst: f64 = 0.0;
        for (i, &g) in grad.iter().enumerate() {
            let w = net.params()[i];
            probe.params_mut()[i] = w + h;
            let up = probe.loss(&batch).unwrap();
            probe.params_mut()[i] = w - h;
            let down = probe.loss(&batch).unwrap();
            probe.params_mut()[i] = w;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-6));
        }
        assert!(worst < 1e-4, "seed {seed}: {worst}");
    }
}

#[test]
fn accuracy_examples() {
    let logits = DMatrix::from_column_slice(
        3,
        4,
        &[
            5.0, 0.0, 0.0, //
            0.0, 5.0, 0.0, //
            0.0, 0.0, 5.0, //
            5.0, 0.0, 0.0,
        ],
    );
    assert_eq!(toynet::accuracy(&logits, &[0, 1, 2, 0]), 1.0);
    assert_eq!(toynet::accuracy(&logits, &[1, 2, 0, 2]), 0.0);
    assert_eq!(toynet::accuracy(&logits, &[0, 1, 2, 1]), 0.75);
}

#[test]
fn uniform_logits_cost_ln_ten() {
    let logits = DMatrix::from_element(NUM_CLASSES, 3, 0.7);
    assert!((toynet::cross_entropy(&logits, &[0, 4, 9]) - 10f64.ln()).abs() < 1e-12);
}

#[test]
fn weights_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    let net = ToyNet::new(4, 6, 3, 8).unwrap();
    net.save(&path).unwrap();
    assert_eq!(ToyNet::load(&path).unwrap(), net);
    std::fs::write(&path, "{ truncated").unwrap();
    assert!(ToyNet::load(&path).is_err());
}

proptest! {
    #[test]
    fn large_logits_stay_finite(scale in 1.0f64..1e4, seed in 0u64..100) {
        let vals: Vec<f64> = (0..NUM_CLASSES * 2)
            .map(|i| scale * (((i as u64 * 7919 + seed) % 13) as f64 - 6.0) / 6.0)
            .collect();
        let logits = DMatrix::from_column_slice(NUM_CLASSES, 2, &vals);
        let l = toynet::cross_entropy(&logits, &[3, 8]);
        prop_assert!(l.is_finite() && l >= 0.0);
    }

    #[test]
    fn reset_is_exact(seed in 0u64..1000, other in 0u64..1000) {
        let fresh = ToyNet::new(3, 4, 5, seed).unwrap();
        let mut net = ToyNet::new(3, 4, 5, other).unwrap();
        net.reset_weights(seed);
        prop_assert_eq!(net.weights_json(), fresh.weights_json());
    }
}
