use std::cell::RefCell;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spotkit::objective::Builtin;
use spotkit::tuner::{self, EvalRecord, Phase, StepClock};
use spotkit::{
    Config, DesignControl, EvalResult, KrigingModel, RunState, SearchSpace, Spot, SurrogateControl, TunerConfig, Value,
};

fn floats(n: usize, lo: f64, hi: f64) -> SearchSpace {
    let body: Vec<String> = (1..=n)
        .map(|i| {
            format!(r#""x{i}": {{"type": "float", "default": 0.5, "transform": "None", "lower": {lo}, "upper": {hi}}}"#)
        })
        .collect();
    SearchSpace::parse_hyper_dict(&format!(r#"{{"m": {{{}}}}}"#, body.join(",")), "m").unwrap()
}

fn ints(n: usize, hi: i64) -> SearchSpace {
    let body: Vec<String> = (1..=n)
        .map(|i| format!(r#""k{i}": {{"type": "int", "default": 0, "transform": "None", "lower": 0, "upper": {hi}}}"#))
        .collect();
    SearchSpace::parse_hyper_dict(&format!(r#"{{"m": {{{}}}}}"#, body.join(",")), "m").unwrap()
}

fn tuner(evals: usize, seed: u64) -> TunerConfig {
    TunerConfig {
        fun_evals: Some(evals),
        seed,
        ..TunerConfig::default()
    }
}

fn surrogate() -> SurrogateControl {
    SurrogateControl {
        model_fun_evals: 400,
        ..SurrogateControl::default()
    }
}

fn design(init_size: usize) -> DesignControl {
    DesignControl {
        init_size,
        repeats: 1,
        seed: 0,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn sphere_beats_random_search() {
    let space = floats(2, -1.0, 1.0);
    let (mut spot, mut random) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let s = Spot::new(&space, tuner(50, seed), design(10), surrogate())
            .run(&mut Builtin::Sphere)
            .unwrap();
        spot.push(s.best_y().unwrap());
        random.push(
            tuner::random_search(&mut Builtin::Sphere, &space, 50, seed)
                .unwrap()
                .best_y()
                .unwrap(),
        );
    }
    assert!(spot.iter().all(|b| *b < 1e-2), "{spot:?}");
    assert!(median(spot) <= median(random));
}

#[test]
fn budget_equal_to_design_has_no_sequential_phase() {
    let space = floats(3, -1.0, 1.0);
    let s = Spot::new(&space, tuner(10, 1), design(10), surrogate())
        .run(&mut Builtin::Sphere)
        .unwrap();
    assert_eq!(s.len(), 10);
    assert_eq!(s.iterations, 0);
    assert!(s.history.iter().all(|r| r.phase == Phase::Initial));
    let min = s.y.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(s.best_y(), Some(min));
}

#[test]
fn initial_design_ignores_the_time_budget() {
    let space = floats(2, -1.0, 1.0);
    let cfg = TunerConfig {
        fun_evals: None,
        max_time: Some(0.0),
        ..TunerConfig::default()
    };
    let s = Spot::new(&space, cfg, design(7), surrogate())
        .with_clock(StepClock::new(0.0, 1.0))
        .run(&mut Builtin::Sphere)
        .unwrap();
    assert_eq!(s.len(), 7);
}

#[test]
fn x_start_is_evaluated_first() {
    let space = floats(2, -1.0, 1.0);
    let mut start = Config::new();
    start.insert("x1", Value::Float(0.25));
    start.insert("x2", Value::Float(-0.75));
    let s = Spot::new(&space, tuner(12, 3), design(5), surrogate())
        .with_x_start(start.clone())
        .run(&mut Builtin::Sphere)
        .unwrap();
    assert_eq!(s.history[0].config, start);
    assert_eq!(s.initial_count(), 6);
}

#[test]
fn sequential_points_are_never_duplicates() {
    let space = ints(2, 6);
    // A flat objective makes the surrogate propose the same point repeatedly.
    let mut flat = |_: &Config| Ok(EvalResult::new(1.0, 0.0));
    let s = Spot::new(&space, tuner(30, 2), design(5), surrogate())
        .run(&mut flat)
        .unwrap();
    let tol = TunerConfig::default().tolerance_x;
    for i in s.initial_count()..s.len() {
        for j in 0..i {
            let d = s.x[i]
                .iter()
                .zip(&s.x[j])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(d > tol, "rows {j} and {i} coincide");
        }
    }
}

#[test]
fn failures_get_the_sentinel_and_the_run_continues() {
    let space = floats(2, -1.0, 1.0);
    let calls = RefCell::new(0);
    let mut flaky = |c: &Config| {
        *calls.borrow_mut() += 1;
        if *calls.borrow() % 4 == 0 {
            Err(spotkit::Error::Evaluation("boom".into()))
        } else {
            Builtin::Sphere.evaluate_value(c)
        }
    };
    let s = Spot::new(&space, tuner(20, 4), design(8), surrogate())
        .run(&mut flaky)
        .unwrap();
    assert_eq!(s.len(), 20);
    let failed: Vec<&EvalRecord> = s.history.iter().filter(|r| r.failed).collect();
    assert_eq!(failed.len(), 5);
    for r in failed {
        let before: Vec<f64> = s.history[..r.iteration - 1].iter().map(|h| h.y).collect();
        assert_eq!(r.y, tuner::failure_sentinel(&before));
    }
}

trait SphereValue {
    fn evaluate_value(&self, c: &Config) -> spotkit::Result<EvalResult>;
}

impl SphereValue for Builtin {
    fn evaluate_value(&self, c: &Config) -> spotkit::Result<EvalResult> {
        Ok(EvalResult::new(self.value(c)?, f64::NAN))
    }
}

#[test]
fn sentinel_rules() {
    assert_eq!(tuner::failure_sentinel(&[]), tuner::FAILURE_FLOOR);
    assert_eq!(tuner::failure_sentinel(&[1.0, 3.0]), 30.0);
    assert_eq!(tuner::failure_sentinel(&[-2.0, -5.0]), -2.0 + 18.0 + 1.0);
    assert_eq!(tuner::failure_sentinel(&[0.0]), 1.0);
}

#[test]
fn suggestion_matches_a_dense_grid_on_the_surrogate() {
    let space = floats(1, 0.0, 1.0);
    let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0]).collect();
    let y: Vec<f64> = x.iter().map(|p| (p[0] - 0.7).powi(2)).collect();
    let model = KrigingModel::fit(&x, &y, &surrogate(), 0).unwrap();
    let grid_best = (0..=10_000)
        .map(|i| i as f64 / 10_000.0)
        .min_by(|a, b| model.predict_mean(&[*a]).total_cmp(&model.predict_mean(&[*b])))
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = tuner::suggest_next(&model, &space, 1, 1000, &mut rng);
    assert!((c[0][0] - 0.7).abs() < 0.05, "{c:?}");
    assert!((c[0][0] - grid_best).abs() < 1e-3, "{} vs grid {grid_best}", c[0][0]);
}

#[test]
fn several_points_are_distinct() {
    let space = floats(2, -1.0, 1.0);
    let x: Vec<Vec<f64>> = (0..9)
        .map(|i| vec![(i % 3) as f64 - 1.0, (i / 3) as f64 - 1.0])
        .collect();
    let y: Vec<f64> = x.iter().map(|p| p[0] * p[0] + p[1] * p[1]).collect();
    let model = KrigingModel::fit(&x, &y, &surrogate(), 0).unwrap();
    let c = tuner::suggest_next(&model, &space, 3, 600, &mut ChaCha8Rng::seed_from_u64(2));
    assert_eq!(c.len(), 3);
    for i in 0..3 {
        for j in 0..i {
            let d = c[i].iter().zip(&c[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d > TunerConfig::default().tolerance_x);
        }
    }
}

#[test]
fn fixed_dimensions_are_left_alone() {
    let space = floats(3, -1.0, 1.0)
        .modify_bounds("x1", [0.3, 0.3])
        .unwrap()
        .modify_bounds("x3", [-0.6, -0.6])
        .unwrap();
    let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 2.0 - 1.0]).collect();
    let y: Vec<f64> = x.iter().map(|p| (p[0] - 0.2).powi(2)).collect();
    let model = KrigingModel::fit(&x, &y, &surrogate(), 0).unwrap();
    for c in tuner::suggest_next(&model, &space, 2, 200, &mut ChaCha8Rng::seed_from_u64(3)) {
        assert_eq!((c[0], c[2]), (0.3, -0.6));
    }
}

#[test]
fn best_picks_the_earliest_minimum() {
    let space = floats(1, 0.0, 10.0);
    let state = |ys: &[f64]| {
        let mut s = Spot::new(&space, tuner(ys.len(), 0), design(ys.len()), surrogate());
        let values = ys.to_vec();
        let mut i = 0;
        let mut obj = move |_: &Config| {
            i += 1;
            Ok(EvalResult::new(values[i - 1], 0.0))
        };
        s.run(&mut obj).unwrap()
    };
    let s = state(&[3.0, 1.0, 2.0]);
    assert_eq!(s.best_index, Some(1));
    assert_eq!(tuner::best(&s, &space).unwrap().0, s.history[1].config);
    let tie = state(&[1.0, 1.0]);
    assert_eq!(tie.best_index, Some(0));
    assert!(tuner::best(&RunState::default(), &space).is_err());
}

#[test]
fn resumed_run_equals_uninterrupted_run() {
    let space = spotkit::objective::mixed_space();
    let full = Spot::new(&space, tuner(22, 9), design(10), surrogate())
        .with_clock(StepClock::new(0.0, 1.0))
        .run(&mut Builtin::Mixed)
        .unwrap();
    for cut in [4, 10, 15] {
        let partial = Spot::new(&space, tuner(22, 9), design(10), surrogate())
            .with_clock(StepClock::new(0.0, 1.0))
            .with_eval_limit(cut)
            .run(&mut Builtin::Mixed)
            .unwrap();
        assert_eq!(partial.len(), cut);
        let restored = RunState::from_json(&partial.to_json()).unwrap();
        let resumed = Spot::new(&space, tuner(22, 9), design(10), surrogate())
            .with_clock(StepClock::new(restored.elapsed, 1.0))
            .resume(restored, &mut Builtin::Mixed)
            .unwrap();
        assert_eq!(resumed.y, full.y, "cut at {cut}");
        assert_eq!(resumed.x, full.x);
    }
}

#[test]
fn on_eval_sees_every_state() {
    let space = floats(2, -1.0, 1.0);
    let mut lens = Vec::new();
    Spot::new(&space, tuner(14, 0), design(6), surrogate())
        .on_eval(|s| {
            lens.push(s.len());
            Ok(())
        })
        .run(&mut Builtin::Sphere)
        .unwrap();
    assert_eq!(lens, (1..=14).collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn runs_are_reproducible_bounded_and_monotone(seed in 0u64..10_000) {
        let space = spotkit::objective::mixed_space().modify_bounds("x2", [0.5, 0.5]).unwrap();
        let run = || Spot::new(&space, tuner(16, seed), design(6), surrogate())
            .with_clock(StepClock::new(0.0, 1.0))
            .run(&mut Builtin::Mixed)
            .unwrap();
        let a = run();
        let b = run();
        prop_assert_eq!(&a.history, &b.history);
        let best = a.best_so_far();
        prop_assert!(best.windows(2).all(|w| w[1] <= w[0]));
        for x in &a.x {
            for (p, v) in space.params().iter().zip(x) {
                prop_assert!(*v >= p.lower && *v <= p.upper);
            }
            prop_assert_eq!(x[1].to_bits(), 0.5f64.to_bits());
        }
    }
}
