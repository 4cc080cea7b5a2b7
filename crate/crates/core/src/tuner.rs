//! The sequential parameter optimization loop.
//!
//! 1. Evaluate the optional start configuration and a Latin hypercube
//!    initial design (always evaluated completely).
//! 2. Repeat until the evaluation or time budget is spent: fit a Kriging
//!    surrogate on all data, minimize its predicted mean, replace proposals
//!    that duplicate evaluated points, evaluate.
//!
//! Each iteration draws from its own seeded random stream, so a run resumed
//! from a persisted [`RunState`] continues exactly as an uninterrupted run.

use std::cell::Cell;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{latin_hypercube, DesignControl};
use crate::error::{Error, Result};
use crate::harness::EvalResult;
use crate::kriging::{KrigingModel, SurrogateControl};
use crate::objective::Objective;
use crate::space::{Config, SearchSpace};
use crate::util;

/// Loss recorded for a failed evaluation when nothing finite has been seen.
pub const FAILURE_FLOOR: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InfillCriterion {
    /// Minimize the predicted mean.
    #[default]
    #[serde(rename = "y")]
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TunerConfig {
    /// Total evaluation budget; `None` is unbounded.
    pub fun_evals: Option<usize>,
    /// Evaluations per proposed configuration.
    pub fun_repeats: usize,
    /// Wall-time budget in minutes, checked between evaluations.
    pub max_time: Option<f64>,
    pub noise: bool,
    /// Minimum max-norm distance between evaluated internal vectors.
    pub tolerance_x: f64,
    pub infill_criterion: InfillCriterion,
    /// Candidates proposed per iteration.
    pub n_points: usize,
    pub seed: u64,
    /// Surrogate evaluations spent per infill search.
    pub infill_budget: usize,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            fun_evals: Some(30),
            fun_repeats: 1,
            max_time: None,
            noise: false,
            tolerance_x: f64::EPSILON.sqrt(),
            infill_criterion: InfillCriterion::Y,
            n_points: 1,
            seed: 123,
            infill_budget: 1000,
        }
    }
}

impl TunerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 || self.fun_repeats == 0 {
            return Err(Error::InvalidControl(
                "n_points and fun_repeats must be at least 1".into(),
            ));
        }
        if !(self.tolerance_x >= 0.0) {
            return Err(Error::InvalidControl(format!(
                "tolerance_x must be non-negative, got {}",
                self.tolerance_x
            )));
        }
        if let Some(t) = self.max_time {
            if !(t >= 0.0) {
                return Err(Error::InvalidControl(format!("max_time must be non-negative, got {t}")));
            }
        }
        if self.fun_evals.is_none() && self.max_time.is_none() {
            return Err(Error::InvalidControl(
                "set fun_evals or max_time; both are unbounded".into(),
            ));
        }
        if self.infill_budget < 2 {
            return Err(Error::InvalidControl("infill_budget must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Initial,
    Sequential,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Initial => "initial",
            Phase::Sequential => "sequential",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// 1-based evaluation counter.
    pub iteration: usize,
    /// Seconds since the run started, at the end of this evaluation.
    pub elapsed: f64,
    pub y: f64,
    pub metric: Option<f64>,
    pub config: Config,
    pub phase: Phase,
    /// The objective failed and `y` is the failure sentinel.
    pub failed: bool,
}

/// Everything evaluated so far. `x` holds full internal vectors (fixed
/// parameters included).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunState {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub metrics: Vec<Option<f64>>,
    pub history: Vec<EvalRecord>,
    pub best_index: Option<usize>,
    /// Number of sequential iterations (surrogate fits) started.
    pub iterations: usize,
    /// Seconds consumed, accumulated across resumed sessions.
    pub elapsed: f64,
}

impl RunState {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn initial_count(&self) -> usize {
        self.history.iter().filter(|r| r.phase == Phase::Initial).count()
    }

    pub fn best_y(&self) -> Option<f64> {
        self.best_index.map(|i| self.y[i])
    }

    /// `min(y[0..=k])` for every k.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.y
            .iter()
            .map(|&v| {
                best = best.min(v);
                best
            })
            .collect()
    }

    fn push(&mut self, x: Vec<f64>, record: EvalRecord) {
        let i = self.y.len();
        if self.best_index.is_none_or(|b| record.y < self.y[b]) {
            self.best_index = Some(i);
        }
        self.x.push(x);
        self.y.push(record.y);
        self.metrics.push(record.metric);
        self.elapsed = record.elapsed;
        self.history.push(record);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let state: RunState = serde_json::from_str(text)?;
        let n = state.y.len();
        if state.x.len() != n || state.metrics.len() != n || state.history.len() != n {
            return Err(Error::InvalidConfig(
                "run state arrays have inconsistent lengths".into(),
            ));
        }
        if state.best_index != argmin(&state.y) {
            return Err(Error::InvalidConfig(
                "run state best_index is not the argmin of y".into(),
            ));
        }
        Ok(state)
    }
}

/// Earliest index of the smallest value.
fn argmin(y: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in y.iter().enumerate() {
        if best.is_none_or(|b| v < y[b]) {
            best = Some(i);
        }
    }
    best
}

/// Natural-unit configuration and loss of the best evaluation (earliest on
/// ties).
pub fn best(state: &RunState, space: &SearchSpace) -> Result<(Config, f64)> {
    let i = argmin(&state.y).ok_or(Error::EmptyState)?;
    Ok((space.from_internal(&state.x[i])?, state.y[i]))
}

/// Source of elapsed seconds.
pub trait Clock {
    fn elapsed(&self) -> f64;
}

/// Real time since construction, plus an offset carried over on resume.
#[derive(Debug)]
pub struct WallClock {
    start: Instant,
    offset: f64,
}

impl WallClock {
    pub fn new(offset: f64) -> Self {
        Self {
            start: Instant::now(),
            offset,
        }
    }
}

impl Clock for WallClock {
    fn elapsed(&self) -> f64 {
        self.offset + self.start.elapsed().as_secs_f64()
    }
}

/// A logical clock that advances by `tick` seconds per reading. Used when
/// event logs must be reproducible byte for byte.
#[derive(Debug)]
pub struct StepClock {
    now: Cell<f64>,
    tick: f64,
}

impl StepClock {
    pub fn new(offset: f64, tick: f64) -> Self {
        Self {
            now: Cell::new(offset),
            tick,
        }
    }
}

impl Clock for StepClock {
    fn elapsed(&self) -> f64 {
        let t = self.now.get() + self.tick;
        self.now.set(t);
        t
    }
}

type Callback<'a> = Box<dyn FnMut(&RunState) -> Result<()> + 'a>;

/// Configured tuner. Build with [`Spot::new`], then [`run`](Spot::run) or
/// [`resume`](Spot::resume).
pub struct Spot<'a> {
    space: &'a SearchSpace,
    tuner: TunerConfig,
    design: DesignControl,
    surrogate: SurrogateControl,
    x_start: Option<Config>,
    clock: Option<Box<dyn Clock + 'a>>,
    on_eval: Option<Callback<'a>>,
    eval_limit: Option<usize>,
}

impl<'a> Spot<'a> {
    pub fn new(space: &'a SearchSpace, tuner: TunerConfig, design: DesignControl, surrogate: SurrogateControl) -> Self {
        Self {
            space,
            tuner,
            design,
            surrogate,
            x_start: None,
            clock: None,
            on_eval: None,
            eval_limit: None,
        }
    }

    /// Evaluate `config` before the initial design.
    pub fn with_x_start(mut self, config: Config) -> Self {
        self.x_start = Some(config);
        self
    }

    /// Replace the wall clock (e.g. by a [`StepClock`]).
    pub fn with_clock(mut self, clock: impl Clock + 'a) -> Self {
        self.clock = Some(Box::new(clock));
        self
    }

    /// Called after every evaluation; an error aborts the run.
    pub fn on_eval(mut self, f: impl FnMut(&RunState) -> Result<()> + 'a) -> Self {
        self.on_eval = Some(Box::new(f));
        self
    }

    /// Stop this session once the state holds `n` evaluations, as if the
    /// process had been interrupted. The run can be resumed afterwards.
    pub fn with_eval_limit(mut self, n: usize) -> Self {
        self.eval_limit = Some(n);
        self
    }

    pub fn tuner_config(&self) -> &TunerConfig {
        &self.tuner
    }

    fn validate(&self) -> Result<()> {
        self.tuner.validate()?;
        self.design.validate()?;
        let dims = self.space.active_dims();
        if dims == 0 {
            return Err(Error::InvalidConfig("search space has no active dimension".into()));
        }
        self.surrogate.validate(dims)
    }

    /// The initial phase: start configuration, then the design rows, each
    /// repeated `fun_repeats` times.
    fn initial_points(&self) -> Result<Vec<Vec<f64>>> {
        let mut points = Vec::new();
        if let Some(start) = &self.x_start {
            let mut x = self.space.to_internal(start)?;
            self.space.repair(&mut x);
            points.extend(std::iter::repeat_n(x, self.tuner.fun_repeats));
        }
        let design = latin_hypercube(
            &DesignControl {
                seed: self.design.seed ^ self.tuner.seed,
                ..self.design
            },
            self.space.active_dims(),
        )?;
        for u in &design.rows {
            let x = self.space.from_unit(u);
            points.extend(std::iter::repeat_n(x, self.tuner.fun_repeats));
        }
        Ok(points)
    }

    pub fn run(&mut self, objective: &mut dyn Objective) -> Result<RunState> {
        self.resume(RunState::default(), objective)
    }

    /// Continue `state` under the remaining budgets.
    pub fn resume(&mut self, mut state: RunState, objective: &mut dyn Objective) -> Result<RunState> {
        self.validate()?;
        let mut clock: Box<dyn Clock + 'a> = match self.clock.take() {
            Some(c) => c,
            None => Box::new(WallClock::new(state.elapsed)),
        };
        let result = self.drive(&mut state, objective, clock.as_mut());
        self.clock = Some(clock);
        result.map(|()| state)
    }

    fn limit_reached(&self, state: &RunState) -> bool {
        self.eval_limit.is_some_and(|n| state.len() >= n)
    }

    fn budget_left(&self, state: &RunState, clock: &dyn Clock) -> bool {
        if self.tuner.fun_evals.is_some_and(|n| state.len() >= n) {
            return false;
        }
        match self.tuner.max_time {
            Some(minutes) => clock.elapsed() < minutes * 60.0,
            None => true,
        }
    }

    fn drive(&mut self, state: &mut RunState, objective: &mut dyn Objective, clock: &dyn Clock) -> Result<()> {
        let initial = self.initial_points()?;
        let done = state.initial_count();
        for x in initial.into_iter().skip(done) {
            if self.limit_reached(state) {
                return Ok(());
            }
            self.evaluate(state, objective, clock, x, Phase::Initial)?;
        }

        while !self.limit_reached(state) && self.budget_left(state, clock) {
            let iteration = state.iterations;
            let mut rng = util::rng(self.tuner.seed, 0x1000 + iteration as u64);
            let candidates = self.propose(state, iteration, &mut rng)?;
            state.iterations += 1;
            'points: for x in candidates {
                for _ in 0..self.tuner.fun_repeats {
                    if self.limit_reached(state) || !self.budget_left(state, clock) {
                        break 'points;
                    }
                    self.evaluate(state, objective, clock, x.clone(), Phase::Sequential)?;
                }
            }
        }
        Ok(())
    }

    fn evaluate(
        &mut self,
        state: &mut RunState,
        objective: &mut dyn Objective,
        clock: &dyn Clock,
        x: Vec<f64>,
        phase: Phase,
    ) -> Result<()> {
        let config = self.space.from_internal(&x)?;
        let (y, metric, failed) = match objective.evaluate(&config) {
            Ok(EvalResult { loss, metric, .. }) if loss.is_finite() => {
                (loss, metric.is_finite().then_some(metric), false)
            }
            _ => (failure_sentinel(&state.y), None, true),
        };
        let record = EvalRecord {
            iteration: state.len() + 1,
            elapsed: clock.elapsed(),
            y,
            metric,
            config,
            phase,
            failed,
        };
        state.push(x, record);
        if let Some(cb) = self.on_eval.as_mut() {
            cb(state)?;
        }
        Ok(())
    }

    /// Fit the surrogate and produce `n_points` new, non-duplicate points.
    fn propose(&self, state: &RunState, iteration: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        let fitted = fit_surrogate(
            self.space,
            state,
            &self.surrogate,
            self.tuner.seed.wrapping_add(iteration as u64),
        );
        let mut candidates = match fitted {
            Ok(model) => suggest_next(&model, self.space, self.tuner.n_points, self.tuner.infill_budget, rng),
            // Too few distinct points or a degenerate fit: explore randomly.
            Err(_) => (0..self.tuner.n_points)
                .map(|_| random_point(self.space, rng))
                .collect(),
        };
        dedup(self.space, &state.x, &mut candidates, self.tuner.tolerance_x, rng);
        Ok(candidates)
    }
}

/// Loss assigned to failed evaluations: ten times the largest finite loss
/// seen so far (shifted upwards for non-positive maxima), or
/// [`FAILURE_FLOOR`] when there is none.
pub fn failure_sentinel(y: &[f64]) -> f64 {
    let max = y
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        FAILURE_FLOOR
    } else if max > 0.0 {
        10.0 * max
    } else {
        max + 9.0 * max.abs() + 1.0
    }
}

/// Fit a Kriging model on the active dimensions of `state`. Repeated
/// configurations are averaged into one observation.
pub fn fit_surrogate(
    space: &SearchSpace,
    state: &RunState,
    control: &SurrogateControl,
    seed: u64,
) -> Result<KrigingModel> {
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for (x, &y) in state.x.iter().zip(&state.y) {
        let a = space.project_active(x);
        match xs.iter().position(|r| *r == a) {
            Some(i) => {
                sums[i].0 += y;
                sums[i].1 += 1;
            }
            None => {
                xs.push(a);
                sums.push((y, 1));
            }
        }
    }
    let ys: Vec<f64> = sums.iter().map(|(s, c)| s / *c as f64).collect();
    KrigingModel::fit(&xs, &ys, control, seed)
}

/// Uniform random full internal vector, snapped to the lattice.
pub fn random_point(space: &SearchSpace, rng: &mut impl Rng) -> Vec<f64> {
    let u: Vec<f64> = (0..space.active_dims()).map(|_| rng.random()).collect();
    space.from_unit(&u)
}

fn max_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn is_duplicate(x: &[f64], others: &[Vec<f64>], tol: f64) -> bool {
    others.iter().any(|o| max_norm(x, o) <= tol)
}

/// Replace candidates lying within `tol` (max-norm) of an evaluated point or
/// an earlier candidate by random points.
fn dedup(space: &SearchSpace, existing: &[Vec<f64>], candidates: &mut [Vec<f64>], tol: f64, rng: &mut impl Rng) {
    const ATTEMPTS: usize = 1000;
    let mut seen: Vec<Vec<f64>> = existing.to_vec();
    for c in candidates.iter_mut() {
        let mut attempts = 0;
        while is_duplicate(c, &seen, tol) && attempts < ATTEMPTS {
            *c = random_point(space, rng);
            attempts += 1;
        }
        seen.push(c.clone());
    }
}

/// Minimize the surrogate mean over the active box: `budget / 2` uniform
/// probes, Nelder-Mead refinement of the best probes with the rest, then
/// lattice snapping. Returns up to `n_points` distinct full vectors; if the
/// search yields fewer distinct points, the remainder are random.
pub fn suggest_next(
    model: &KrigingModel,
    space: &SearchSpace,
    n_points: usize,
    budget: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let bounds = space.active_bounds();
    let d = bounds.len();
    let f = |a: &[f64]| model.predict_mean(a);
    let probes = (budget / 2).max(1);
    let mut scored: Vec<(f64, Vec<f64>)> = (0..probes)
        .map(|_| {
            let p: Vec<f64> = bounds
                .iter()
                .map(|(lo, hi)| lo + rng.random::<f64>() * (hi - lo))
                .collect();
            (f(&p), p)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let starts = n_points.min(scored.len());
    let per_start = (budget - probes) / starts.max(1);
    let mut refined: Vec<(f64, Vec<f64>)> = scored
        .iter()
        .take(starts)
        .map(|(_, p)| nelder_mead(&f, p, &bounds, per_start))
        .collect();
    refined.extend(scored.into_iter().skip(starts));
    refined.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n_points);
    for (_, p) in refined {
        if out.len() == n_points {
            break;
        }
        let mut full = space.expand_active(&p);
        space.repair(&mut full);
        if !out.contains(&full) {
            out.push(full);
        }
    }
    while out.len() < n_points {
        out.push(random_point(space, rng));
    }
    debug_assert!(out.iter().all(|x| x.len() == space.len() && d == space.active_dims()));
    out
}

fn clamp_to(p: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in p.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Box-constrained Nelder-Mead (points are clamped into the box) with a
/// fixed evaluation budget. Returns the best value and point.
fn nelder_mead(f: &impl Fn(&[f64]) -> f64, start: &[f64], bounds: &[(f64, f64)], budget: usize) -> (f64, Vec<f64>) {
    let d = start.len();
    let evals = Cell::new(0usize);
    let eval = |p: &mut Vec<f64>| {
        clamp_to(p, bounds);
        evals.set(evals.get() + 1);
        f(p)
    };
    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(d + 1);
    let mut s0 = start.to_vec();
    simplex.push((eval(&mut s0), s0));
    for k in 0..d {
        let (lo, hi) = bounds[k];
        let step = 0.1 * (hi - lo);
        let mut p = start.to_vec();
        p[k] = if p[k] + step <= hi { p[k] + step } else { p[k] - step };
        simplex.push((eval(&mut p), p));
    }
    while evals.get() + 2 <= budget {
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
        let worst = simplex[d].clone();
        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|(_, p)| p[k]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst.1).map(|(c, w)| c + t * (c - w)).collect() };
        let mut xr = along(1.0);
        let fr = eval(&mut xr);
        if fr < simplex[0].0 {
            let mut xe = along(2.0);
            let fe = eval(&mut xe);
            simplex[d] = if fe < fr { (fe, xe) } else { (fr, xr) };
        } else if fr < simplex[d - 1].0 {
            simplex[d] = (fr, xr);
        } else {
            let mut xc = if fr < worst.0 { along(0.5) } else { along(-0.5) };
            let fc = eval(&mut xc);
            if fc < worst.0.min(fr) {
                simplex[d] = (fc, xc);
            } else {
                // Shrink towards the best vertex.
                let best = simplex[0].1.clone();
                for v in simplex.iter_mut().skip(1) {
                    let mut p: Vec<f64> = best.iter().zip(&v.1).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    let fp = eval(&mut p);
                    *v = (fp, p);
                }
            }
        }
    }
    simplex
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("simplex is non-empty")
}

/// Random search with the same evaluation accounting as the tuner.
pub fn random_search(objective: &mut dyn Objective, space: &SearchSpace, evals: usize, seed: u64) -> Result<RunState> {
    if space.active_dims() == 0 {
        return Err(Error::InvalidConfig("search space has no active dimension".into()));
    }
    let mut rng = util::rng(seed, 0x7a2d);
    let mut state = RunState::default();
    for i in 0..evals {
        let x = random_point(space, &mut rng);
        let config = space.from_internal(&x)?;
        let (y, metric, failed) = match objective.evaluate(&config) {
            Ok(r) if r.loss.is_finite() => (r.loss, r.metric.is_finite().then_some(r.metric), false),
            _ => (failure_sentinel(&state.y), None, true),
        };
        state.push(
            x,
            EvalRecord {
                iteration: i + 1,
                elapsed: 0.0,
                y,
                metric,
                config,
                phase: Phase::Initial,
                failed,
            },
        );
    }
    Ok(state)
}
