//! Config-file driven experiments: tune, resume and benchmark against
//! random search. Every output file is written atomically.
//!
//! An experiment directory contains:
//!
//! | file | content |
//! |------|---------|
//! | `experiment.json` | the resolved configuration |
//! | `space.json` | the hyper-dict after bounds/levels modifications |
//! | `run_state.json` | the tuner state, rewritten after every evaluation |
//! | `events.csv` | one row per evaluation |
//! | `results.csv` | the design table with tuned values and importances |
//! | `importance.csv`, `progress.csv`, `parallel.csv`, `contour_<a>_<b>.csv` | analysis exports |
//!
//! Runs of the built-in network additionally train the best configuration
//! (`tuned_weights.json`) and score it on the test set (`test_result.json`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, ImportanceEntry, ImportanceReport};
use crate::design::DesignControl;
use crate::error::{Error, Result};
use crate::harness::{self, EvalResult, EvalSetting};
use crate::kriging::SurrogateControl;
use crate::objective::{Builtin, ExternalObjective, Objective, ToyNetObjective};
use crate::space::{Config, SearchSpace};
use crate::toynet::{self, HyperConfig};
use crate::tuner::{self, RunState, Spot, StepClock, TunerConfig, WallClock};
use crate::util;

pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const SPACE_FILE: &str = "space.json";
pub const STATE_FILE: &str = "run_state.json";
pub const EVENTS_FILE: &str = "events.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const IMPORTANCE_FILE: &str = "importance.csv";
pub const PROGRESS_FILE: &str = "progress.csv";
pub const PARALLEL_FILE: &str = "parallel.csv";
pub const WEIGHTS_FILE: &str = "tuned_weights.json";
pub const TEST_RESULT_FILE: &str = "test_result.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Modifications {
    /// New internal bounds per parameter, applied in order.
    pub bounds: IndexMap<String, [f64; 2]>,
    /// New level subsets per factor, applied after the bounds.
    pub levels: IndexMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n: usize,
    pub input_dim: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n: toynet::DEFAULT_SAMPLES,
            input_dim: toynet::DEFAULT_INPUT_DIM,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    #[default]
    Wall,
    /// One logical second per reading; makes `events.csv` reproducible.
    Logical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum XStart {
    /// `"default"`: the space's default configuration.
    Named(String),
    Config(Config),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Hyper-dict path, relative to the experiment file.
    pub hyper_dict: PathBuf,
    pub model: String,
    /// `toynet`, `external:<command>` or `builtin:<name>`.
    pub objective: String,
    #[serde(default)]
    pub modifications: Modifications,
    #[serde(default)]
    pub tuner: TunerConfig,
    #[serde(default)]
    pub design: DesignControl,
    #[serde(default)]
    pub surrogate: SurrogateControl,
    #[serde(default = "default_eval")]
    pub eval: EvalSetting,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    #[serde(default)]
    pub data: DataConfig,
    /// Overrides `tuner.seed`; also seeds network training.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub x_start: Option<XStart>,
    #[serde(default)]
    pub clock: ClockKind,
    /// Seconds allowed per external evaluation.
    #[serde(default = "default_timeout")]
    pub external_timeout: f64,
    #[serde(default = "default_threshold")]
    pub importance_threshold: f64,
    #[serde(default = "default_grid")]
    pub contour_grid: usize,
}

fn default_eval() -> EvalSetting {
    EvalSetting::TrainHoldOut
}

fn default_true() -> bool {
    true
}

fn default_timeout() -> f64 {
    600.0
}

fn default_threshold() -> f64 {
    0.025
}

fn default_grid() -> usize {
    20
}

/// Command-line overrides; `None` keeps the file's value.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_time: Option<f64>,
    pub fun_evals: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TuneOptions {
    pub overrides: Overrides,
    /// Stop after this many evaluations, leaving a resumable state.
    pub stop_after: Option<usize>,
}

/// Errors split by whether the input or the run was at fault.
#[derive(Debug)]
pub enum Failure {
    Config(Error),
    Runtime(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &Error {
        match self {
            Failure::Config(e) | Failure::Runtime(e) => e,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e}"),
            Failure::Runtime(e) => write!(f, "runtime error: {e}"),
        }
    }
}

impl std::error::Error for Failure {}

fn config_err<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Config)
}

fn runtime_err<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Runtime)
}

#[derive(Debug, Clone)]
pub struct TuneSummary {
    pub out_dir: PathBuf,
    pub evaluations: usize,
    pub best_y: f64,
    pub best_config: Config,
    /// Test-set result of the retrained best network (network runs only).
    pub test: Option<EvalResult>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        if cfg.hyper_dict.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.hyper_dict = dir.join(&cfg.hyper_dict);
            }
        }
        Ok(cfg)
    }

    fn apply(&mut self, o: Overrides) {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(s) = self.seed {
            self.tuner.seed = s;
        }
        if let Some(t) = o.max_time {
            self.tuner.max_time = Some(t);
        }
        if let Some(n) = o.fun_evals {
            self.tuner.fun_evals = Some(n);
        }
    }

    fn validate(&self) -> Result<()> {
        self.tuner.validate()?;
        self.design.validate()?;
        if !(self.importance_threshold >= 0.0) {
            return Err(Error::InvalidConfig("importance_threshold must be non-negative".into()));
        }
        if self.contour_grid < 2 {
            return Err(Error::InvalidConfig("contour_grid must be at least 2".into()));
        }
        if !(self.external_timeout > 0.0) {
            return Err(Error::InvalidConfig("external_timeout must be positive".into()));
        }
        ObjectiveKind::parse(&self.objective).map(|_| ())
    }

    /// Load the hyper-dict and apply the modifications.
    pub fn search_space(&self) -> Result<SearchSpace> {
        let text = fs::read_to_string(&self.hyper_dict).map_err(|e| Error::io(&self.hyper_dict, e))?;
        let mut space = SearchSpace::parse_hyper_dict(&text, &self.model)?;
        for (name, bounds) in &self.modifications.bounds {
            space = space.modify_bounds(name, *bounds)?;
        }
        for (name, levels) in &self.modifications.levels {
            space = space.modify_levels(name, levels)?;
        }
        Ok(space)
    }

    fn seed(&self) -> u64 {
        self.tuner.seed
    }
}

enum ObjectiveKind {
    ToyNet,
    External(String),
    Builtin(Builtin),
}

impl ObjectiveKind {
    fn parse(s: &str) -> Result<Self> {
        if s == "toynet" {
            Ok(ObjectiveKind::ToyNet)
        } else if let Some(cmd) = s.strip_prefix("external:") {
            if cmd.trim().is_empty() {
                return Err(Error::InvalidConfig("external objective needs a command".into()));
            }
            Ok(ObjectiveKind::External(cmd.to_string()))
        } else if let Some(name) = s.strip_prefix("builtin:") {
            Ok(ObjectiveKind::Builtin(Builtin::parse(name)?))
        } else {
            Err(Error::InvalidConfig(format!(
                "objective must be `toynet`, `external:<command>` or `builtin:<name>`, got `{s}`"
            )))
        }
    }
}

fn build_objective(cfg: &ExperimentConfig) -> Result<Box<dyn Objective>> {
    Ok(match ObjectiveKind::parse(&cfg.objective)? {
        ObjectiveKind::ToyNet => {
            let (train, test) = toynet::generate_dataset(cfg.data.n, cfg.data.input_dim, cfg.data.seed)?;
            Box::new(ToyNetObjective {
                train,
                test,
                setting: cfg.eval,
                shuffle: cfg.shuffle,
                seed: cfg.seed(),
            })
        }
        ObjectiveKind::External(command) => Box::new(ExternalObjective {
            command,
            timeout: Duration::from_secs_f64(cfg.external_timeout),
        }),
        ObjectiveKind::Builtin(b) => Box::new(b),
    })
}

fn x_start(cfg: &ExperimentConfig, space: &SearchSpace) -> Result<Option<Config>> {
    match &cfg.x_start {
        None => Ok(None),
        Some(XStart::Named(n)) if n == "default" => Ok(Some(space.default_config())),
        Some(XStart::Named(n)) => Err(Error::InvalidConfig(format!(
            "x_start must be \"default\" or a configuration, got `{n}`"
        ))),
        Some(XStart::Config(c)) => {
            space.to_internal(c)?;
            Ok(Some(c.clone()))
        }
    }
}

pub fn events_csv(state: &RunState) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "elapsed", "loss", "metric", "config"])
        .expect("in-memory csv");
    for r in &state.history {
        w.write_record([
            r.iteration.to_string(),
            format!("{:.6}", r.elapsed),
            format!("{:?}", r.y),
            r.metric.map_or(String::new(), |m| format!("{m:?}")),
            r.config.to_json(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

fn write(path: &Path, text: &str) -> Result<()> {
    util::atomic_write(path, text.as_bytes())
}

fn persist_state(out: &Path, state: &RunState) -> Result<()> {
    write(&out.join(STATE_FILE), &state.to_json())?;
    write(&out.join(EVENTS_FILE), &events_csv(state))
}

fn load_state(out: &Path) -> Result<RunState> {
    let path = out.join(STATE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    RunState::from_json(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Run a tuning experiment described by the file at `config_path`, writing
/// all artifacts to `out`. The design table is printed to `log` first.
pub fn tune(
    config_path: &Path,
    out: &Path,
    options: TuneOptions,
    log: &mut dyn Write,
) -> std::result::Result<TuneSummary, Failure> {
    let mut cfg = config_err(ExperimentConfig::load(config_path))?;
    cfg.apply(options.overrides);
    config_err(cfg.validate())?;
    let space = config_err(cfg.search_space())?;
    if space.active_dims() == 0 {
        return Err(Failure::Config(Error::InvalidConfig("every parameter is fixed".into())));
    }
    let start = config_err(x_start(&cfg, &space))?;
    let mut objective = config_err(build_objective(&cfg))?;

    let _ = writeln!(log, "{}", space.design_table(None).to_text());
    runtime_err(fs::create_dir_all(out).map_err(|e| Error::io(out, e)))?;
    runtime_err(write(
        &out.join(EXPERIMENT_FILE),
        &serde_json::to_string_pretty(&cfg).expect("config serializes"),
    ))?;
    runtime_err(write(&out.join(SPACE_FILE), &space.to_hyper_dict_json(&cfg.model)))?;

    let state = drive(
        &cfg,
        &space,
        start,
        objective.as_mut(),
        RunState::default(),
        out,
        options.stop_after,
    )?;
    finish(
        &cfg,
        &space,
        &state,
        out,
        log,
        options.stop_after.is_some_and(|n| state.len() >= n),
    )
}

/// Continue the experiment stored in `out` under its remaining budget.
pub fn resume(out: &Path, log: &mut dyn Write) -> std::result::Result<TuneSummary, Failure> {
    let exp_path = out.join(EXPERIMENT_FILE);
    let text = config_err(fs::read_to_string(&exp_path).map_err(|e| Error::io(&exp_path, e)))?;
    let cfg: ExperimentConfig = config_err(serde_json::from_str(&text).map_err(Error::from))?;
    config_err(cfg.validate())?;
    let space_path = out.join(SPACE_FILE);
    let space_text = config_err(fs::read_to_string(&space_path).map_err(|e| Error::io(&space_path, e)))?;
    let space = config_err(SearchSpace::parse_hyper_dict(&space_text, &cfg.model))?;
    let state = config_err(load_state(out))?;
    let start = config_err(x_start(&cfg, &space))?;
    let mut objective = config_err(build_objective(&cfg))?;
    let before = state.len();
    let state = drive(&cfg, &space, start, objective.as_mut(), state, out, None)?;
    let _ = writeln!(log, "resumed with {before} evaluations, now {}", state.len());
    finish(&cfg, &space, &state, out, log, false)
}

fn drive(
    cfg: &ExperimentConfig,
    space: &SearchSpace,
    start: Option<Config>,
    objective: &mut dyn Objective,
    state: RunState,
    out: &Path,
    stop_after: Option<usize>,
) -> std::result::Result<RunState, Failure> {
    let mut spot = Spot::new(space, cfg.tuner.clone(), cfg.design, cfg.surrogate.clone())
        .on_eval(|s: &RunState| persist_state(out, s));
    spot = match cfg.clock {
        ClockKind::Wall => spot.with_clock(WallClock::new(state.elapsed)),
        ClockKind::Logical => spot.with_clock(StepClock::new(state.elapsed, 1.0)),
    };
    if let Some(c) = start {
        spot = spot.with_x_start(c);
    }
    if let Some(n) = stop_after {
        spot = spot.with_eval_limit(n);
    }
    let state = runtime_err(spot.resume(state, objective))?;
    runtime_err(persist_state(out, &state))?;
    Ok(state)
}

fn finish(
    cfg: &ExperimentConfig,
    space: &SearchSpace,
    state: &RunState,
    out: &Path,
    log: &mut dyn Write,
    interrupted: bool,
) -> std::result::Result<TuneSummary, Failure> {
    let (best_config, best_y) = runtime_err(tuner::best(state, space))?;
    let best_x = state.x[state.best_index.expect("non-empty state")].clone();
    let summary = |test| TuneSummary {
        out_dir: out.to_path_buf(),
        evaluations: state.len(),
        best_y,
        best_config: best_config.clone(),
        test,
    };
    if interrupted {
        let _ = writeln!(log, "stopped after {} evaluations; resume to continue", state.len());
        return Ok(summary(None));
    }

    let model = tuner::fit_surrogate(space, state, &cfg.surrogate, cfg.seed()).ok();
    let report = match &model {
        Some(m) => runtime_err(analysis::importance(m, space))?,
        None => flat_report(space),
    };
    let table = space.design_table(Some((&best_x, &report)));
    runtime_err(write(&out.join(RESULTS_FILE), &table.to_csv()))?;
    runtime_err(write(&out.join(IMPORTANCE_FILE), &report.to_csv()))?;
    let progress = runtime_err(analysis::export_progress(state))?;
    runtime_err(write(&out.join(PROGRESS_FILE), &analysis::progress_csv(&progress)))?;
    let parallel = runtime_err(analysis::export_parallel(state, space))?;
    runtime_err(write(&out.join(PARALLEL_FILE), &parallel.to_csv()))?;
    if let Some(model) = &model {
        for (a, b) in contour_pairs(&report, cfg.importance_threshold) {
            let grid = runtime_err(analysis::export_contour(
                model,
                space,
                (&a, &b),
                cfg.contour_grid,
                &best_x,
            ))?;
            runtime_err(write(&out.join(format!("contour_{a}_{b}.csv")), &grid.to_csv()))?;
        }
    }

    let _ = writeln!(log, "{}", table.to_text());
    let _ = writeln!(
        log,
        "best loss {best_y:?} after {} evaluations: {}",
        state.len(),
        best_config.to_json()
    );

    let mut test = None;
    if matches!(ObjectiveKind::parse(&cfg.objective), Ok(ObjectiveKind::ToyNet)) {
        let result = runtime_err(train_and_test(cfg, &best_config, out))?;
        let _ = writeln!(log, "test loss {:.4}, test accuracy {:.4}", result.loss, result.metric);
        test = Some(result);
    }
    Ok(summary(test))
}

fn flat_report(space: &SearchSpace) -> ImportanceReport {
    ImportanceReport {
        entries: space
            .params()
            .iter()
            .map(|p| ImportanceEntry {
                name: p.name.clone(),
                importance: 0.0,
                stars: String::new(),
                active: !p.is_fixed(),
            })
            .collect(),
    }
}

/// Pairs above the threshold; when fewer than two parameters qualify, the
/// two most important active parameters.
fn contour_pairs(report: &ImportanceReport, threshold: f64) -> Vec<(String, String)> {
    let pairs = analysis::select_important_pairs(report, threshold);
    if !pairs.is_empty() {
        return pairs;
    }
    let ranked = report.ranked();
    match ranked.as_slice() {
        [a, b, ..] => vec![(a.name.clone(), b.name.clone())],
        _ => Vec::new(),
    }
}

/// Retrain the best configuration with checkpointing and evaluate the
/// checkpoint on the test set.
fn train_and_test(cfg: &ExperimentConfig, best: &Config, out: &Path) -> Result<EvalResult> {
    let hyper = HyperConfig::from_config(best)?;
    let (train, test) = toynet::generate_dataset(cfg.data.n, cfg.data.input_dim, cfg.data.seed)?;
    let weights = out.join(WEIGHTS_FILE);
    harness::train_tuned(&hyper, &train, cfg.shuffle, cfg.seed(), Some(&weights))?;
    let result = harness::test_tuned_from_file(&weights, &test, hyper.batch_size)?;
    write(&out.join(TEST_RESULT_FILE), &serde_json::to_string_pretty(&result)?)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodStats {
    pub method: String,
    pub median: f64,
    pub iqr: f64,
    pub evaluations: usize,
    pub best: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub budget: usize,
    pub repetitions: usize,
    pub methods: Vec<MethodStats>,
    /// Repetitions where the tuner's best loss was strictly below random search's.
    pub spot_wins: usize,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("budget {} evaluations, {} repetitions\n", self.budget, self.repetitions);
        s.push_str(&format!(
            "{:<8} {:>14} {:>14} {:>6}\n",
            "method", "median", "iqr", "evals"
        ));
        for m in &self.methods {
            s.push_str(&format!(
                "{:<8} {:>14.6e} {:>14.6e} {:>6}\n",
                m.method, m.median, m.iqr, m.evaluations
            ));
        }
        s.push_str(&format!(
            "spot better than random in {}/{} repetitions\n",
            self.spot_wins, self.repetitions
        ));
        s
    }
}

fn stats(method: &str, best: Vec<f64>, evaluations: usize) -> MethodStats {
    MethodStats {
        method: method.to_string(),
        median: util::quantile(&best, 0.5),
        iqr: util::quantile(&best, 0.75) - util::quantile(&best, 0.25),
        evaluations,
        best,
    }
}

/// Compare the tuner with random search at equal budgets over `reps`
/// consecutive seeds starting at the configured one.
pub fn bench(config_path: &Path, reps: usize, overrides: Overrides) -> std::result::Result<BenchReport, Failure> {
    let mut cfg = config_err(ExperimentConfig::load(config_path))?;
    cfg.apply(overrides);
    cfg.tuner.max_time = None;
    config_err(cfg.validate())?;
    if reps == 0 {
        return Err(Failure::Config(Error::InvalidConfig(
            "repetitions must be at least 1".into(),
        )));
    }
    let budget = match cfg.tuner.fun_evals {
        Some(n) if n >= cfg.design.init_size * cfg.tuner.fun_repeats => n,
        _ => {
            return Err(Failure::Config(Error::InvalidConfig(
                "bench needs a finite fun_evals covering the initial design".into(),
            )))
        }
    };
    let space = config_err(cfg.search_space())?;
    let mut objective = config_err(build_objective(&cfg))?;
    let base = cfg.seed();
    let (mut spot_best, mut rand_best) = (Vec::new(), Vec::new());
    let (mut spot_evals, mut rand_evals) = (0, 0);
    for r in 0..reps as u64 {
        let seed = base.wrapping_add(r);
        let tuner = TunerConfig {
            seed,
            ..cfg.tuner.clone()
        };
        let s = runtime_err(Spot::new(&space, tuner, cfg.design, cfg.surrogate.clone()).run(objective.as_mut()))?;
        let rs = runtime_err(tuner::random_search(objective.as_mut(), &space, budget, seed))?;
        spot_evals = s.len();
        rand_evals = rs.len();
        spot_best.push(s.best_y().expect("non-empty"));
        rand_best.push(rs.best_y().expect("non-empty"));
    }
    let spot_wins = spot_best.iter().zip(&rand_best).filter(|(s, r)| s < r).count();
    Ok(BenchReport {
        budget,
        repetitions: reps,
        methods: vec![
            stats("spot", spot_best, spot_evals),
            stats("random", rand_best, rand_evals),
        ],
        spot_wins,
    })
}
