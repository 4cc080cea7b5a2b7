use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spotkit::design::latin_hypercube;
use spotkit::kriging::{neg_log_likelihood, JITTER_FLOOR};
use spotkit::{analysis, DesignControl, KrigingModel, SearchSpace, SurrogateControl};

fn control(noise: bool, evals: usize) -> SurrogateControl {
    SurrogateControl {
        noise,
        model_fun_evals: evals,
        ..SurrogateControl::default()
    }
}

fn points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

/// `n ln σ̂² + ln det R` with an explicit inverse and determinant.
fn dense_nll(x: &[Vec<f64>], y: &[f64], theta: &[f64], nugget: f64) -> f64 {
    let n = x.len();
    let r = DMatrix::from_fn(n, n, |i, j| {
        let d: f64 = x[i]
            .iter()
            .zip(&x[j])
            .zip(theta)
            .map(|((a, b), t)| 10f64.powf(*t) * (a - b) * (a - b))
            .sum();
        (-d).exp() + if i == j { nugget } else { 0.0 }
    });
    let inv = r.clone().try_inverse().unwrap();
    let ones = DVector::from_element(n, 1.0);
    let yv = DVector::from_column_slice(y);
    let mu = (ones.transpose() * &inv * &yv)[0] / (ones.transpose() * &inv * &ones)[0];
    let e = yv.add_scalar(-mu);
    let sigma2 = (e.transpose() * &inv * &e)[0] / n as f64;
    n as f64 * sigma2.ln() + r.determinant().ln()
}

#[test]
fn likelihood_matches_dense_inverse() {
    let x = vec![vec![0.0, 0.0], vec![1.0, 0.2], vec![0.4, 1.0], vec![0.7, 0.6]];
    let y = [1.0, 3.0, -0.5, 2.0];
    for (theta, nugget) in [([0.0, 0.0], 1e-10), ([0.5, -0.3], 1e-4), ([1.2, 0.8], 1e-2)] {
        let fast = neg_log_likelihood(&x, &y, &theta, nugget);
        let slow = dense_nll(&x, &y, &theta, nugget);
        assert!((fast - slow).abs() < 1e-8, "{theta:?}: {fast} vs {slow}");
    }
}

#[test]
fn nugget_helps_on_noisy_duplicates() {
    let x = vec![vec![0.0], vec![0.0], vec![0.5], vec![0.5], vec![1.0], vec![1.0]];
    let y = [1.0, 1.3, 0.2, -0.1, 0.9, 1.2];
    let grid: Vec<f64> = (0..8).map(|k| 10f64.powi(-8 + k)).collect();
    let nll: Vec<f64> = grid.iter().map(|g| neg_log_likelihood(&x, &y, &[0.5], *g)).collect();
    assert!(nll.windows(2).any(|w| w[1] < w[0]), "{nll:?}");
}

#[test]
fn leave_one_out_error_is_small() {
    let design = latin_hypercube(
        &DesignControl {
            init_size: 20,
            repeats: 1,
            seed: 3,
        },
        2,
    )
    .unwrap();
    let x = design.rows;
    let y: Vec<f64> = x.iter().map(|p| p[0] * p[0] + p[1] * p[1]).collect();
    let range = y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min);
    let mut sse = 0.0;
    for i in 0..x.len() {
        let xs: Vec<Vec<f64>> = x
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, r)| r.clone())
            .collect();
        let ys: Vec<f64> = y.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
        let m = KrigingModel::fit(&xs, &ys, &control(false, 500), 1).unwrap();
        sse += (m.predict_mean(&x[i]) - y[i]).powi(2);
    }
    let rmse = (sse / x.len() as f64).sqrt();
    assert!(rmse < 0.05 * range, "rmse {rmse}, range {range}");
}

#[test]
fn interpolates_at_sites_with_near_zero_variance() {
    let x = points(12, 3, 8);
    let y: Vec<f64> = x.iter().map(|p| (5.0 * p[0]).sin() + p[1] - p[2] * p[2]).collect();
    let m = KrigingModel::fit(&x, &y, &control(false, 800), 2).unwrap();
    for (p, t) in x.iter().zip(&y) {
        let (mean, var) = m.predict(p);
        assert!((mean - t).abs() <= 1e-6 * (1.0 + t.abs()));
        assert!(var <= 1e-8 * m.sigma2().max(1.0), "{var}");
    }
}

#[test]
fn fit_respects_the_likelihood_budget() {
    let x = points(10, 2, 5);
    let y: Vec<f64> = x.iter().map(|p| p[0] - p[1]).collect();
    for evals in [1, 7, 50] {
        let m = KrigingModel::fit(&x, &y, &control(true, evals), 0).unwrap();
        assert!(m.likelihood_evals() <= evals);
    }
}

#[test]
fn rescaling_an_input_keeps_the_argmin() {
    let x = points(15, 2, 21);
    let y: Vec<f64> = x
        .iter()
        .map(|p| (p[0] - 0.3).powi(2) + 2.0 * (p[1] - 0.6).powi(2))
        .collect();
    let scaled: Vec<Vec<f64>> = x.iter().map(|p| vec![100.0 * p[0] - 5.0, p[1]]).collect();
    let a = KrigingModel::fit(&x, &y, &control(false, 500), 9).unwrap();
    let b = KrigingModel::fit(&scaled, &y, &control(false, 500), 9).unwrap();
    let cands = points(200, 2, 22);
    let argmin = |m: &KrigingModel, f: &dyn Fn(&[f64]) -> Vec<f64>| {
        (0..cands.len())
            .min_by(|&i, &j| m.predict_mean(&f(&cands[i])).total_cmp(&m.predict_mean(&f(&cands[j]))))
            .unwrap()
    };
    assert_eq!(
        argmin(&a, &|p| p.to_vec()),
        argmin(&b, &|p| vec![100.0 * p[0] - 5.0, p[1]])
    );
}

#[test]
fn importance_ranks_the_dominant_input_first() {
    let space = SearchSpace::parse_hyper_dict(
        r#"{"m": {"x1": {"type": "float", "default": 0.5, "transform": "None", "lower": 0, "upper": 1},
                  "x2": {"type": "float", "default": 0.5, "transform": "None", "lower": 0, "upper": 1}}}"#,
        "m",
    )
    .unwrap();
    let x = latin_hypercube(
        &DesignControl {
            init_size: 40,
            repeats: 1,
            seed: 4,
        },
        2,
    )
    .unwrap()
    .rows;
    let y: Vec<f64> = x.iter().map(|p| 10.0 * p[0] * p[0] + 0.1 * p[1] * p[1]).collect();
    let m = KrigingModel::fit(&x, &y, &control(false, 1000), 6).unwrap();
    let report = analysis::importance(&m, &space).unwrap();
    assert_eq!(report.get("x1").unwrap().importance, 100.0);
    assert!(report.get("x2").unwrap().importance < 100.0);
}

#[test]
fn constant_data_reverts_to_the_constant() {
    let x = points(6, 2, 1);
    let m = KrigingModel::fit(&x, &[3.5; 6], &control(false, 100), 0).unwrap();
    for p in points(5, 2, 2) {
        assert!((m.predict_mean(&p) - 3.5).abs() < 1e-12);
    }
    assert_eq!(m.sigma2(), 0.0);
}

#[test]
fn jitter_floor_is_used_without_noise() {
    let x = points(8, 2, 3);
    let y: Vec<f64> = x.iter().map(|p| p[0]).collect();
    let m = KrigingModel::fit(&x, &y, &control(false, 100), 0).unwrap();
    assert!(m.nugget() >= JITTER_FLOOR && m.nugget() <= 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn variance_is_nonnegative(seed in 0u64..1000, probe in prop::collection::vec(-0.5f64..1.5, 2)) {
        let x = points(8, 2, seed);
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).cos() + p[1]).collect();
        let m = KrigingModel::fit(&x, &y, &control(seed % 2 == 0, 200), seed).unwrap();
        let (mean, var) = m.predict(&probe);
        prop_assert!(var >= 0.0);
        prop_assert!(mean.is_finite());
    }

    #[test]
    fn fitted_theta_beats_random_thetas(seed in 0u64..500) {
        let x = points(10, 2, seed);
        let y: Vec<f64> = x.iter().map(|p| 4.0 * p[0] * p[0] - p[1]).collect();
        let c = control(false, 600);
        let m = KrigingModel::fit(&x, &y, &c, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for _ in 0..64 {
            let t = [rng.random_range(c.min_theta..c.max_theta), rng.random_range(c.min_theta..c.max_theta)];
            prop_assert!(m.neg_log_likelihood() <= neg_log_likelihood(m.normalized_inputs(), m.targets(), &t, m.nugget()));
        }
    }
}
