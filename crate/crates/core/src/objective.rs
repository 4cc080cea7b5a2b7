//! Objective functions the tuner can minimize.

use std::time::Duration;

use crate::error::{Error, Result};
use crate::harness::{self, EvalResult, EvalSetting};
use crate::space::{Config, SearchSpace, Value};
use crate::toynet::{Dataset, HyperConfig};

/// Maps a configuration to a loss to be minimized.
pub trait Objective {
    fn evaluate(&mut self, config: &Config) -> Result<EvalResult>;
}

impl<F> Objective for F
where
    F: FnMut(&Config) -> Result<EvalResult>,
{
    fn evaluate(&mut self, config: &Config) -> Result<EvalResult> {
        self(config)
    }
}

/// Trains the built-in network under one evaluation setting. The same seed
/// is used for every configuration, so results are deterministic.
#[derive(Debug, Clone)]
pub struct ToyNetObjective {
    pub train: Dataset,
    pub test: Dataset,
    pub setting: EvalSetting,
    pub shuffle: bool,
    pub seed: u64,
}

impl Objective for ToyNetObjective {
    fn evaluate(&mut self, config: &Config) -> Result<EvalResult> {
        let hyper = HyperConfig::from_config(config)?;
        harness::evaluate(&hyper, self.setting, &self.train, &self.test, self.shuffle, self.seed)
    }
}

/// Evaluates configurations in a child process (see
/// [`harness::external_evaluate`]).
#[derive(Debug, Clone)]
pub struct ExternalObjective {
    pub command: String,
    pub timeout: Duration,
}

impl Objective for ExternalObjective {
    fn evaluate(&mut self, config: &Config) -> Result<EvalResult> {
        harness::external_evaluate(&self.command, config, self.timeout)
    }
}

/// Synthetic test functions selected by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    /// Sum of squares of all numeric parameters.
    Sphere,
    /// Separable quadratic over `x1`, `x2` (floats), `width` (power-of-two
    /// integer) and `kernel` (factor with a preferred level).
    Mixed,
}

/// Level penalties of the `kernel` factor in [`Builtin::Mixed`].
pub const MIXED_LEVELS: [(&str, f64); 4] = [("linear", 1.0), ("poly", 0.5), ("rbf", 0.0), ("sigmoid", 2.0)];

/// Hyper-dict of the mixed benchmark, under model name `"mixed"`.
pub const MIXED_HYPER_DICT: &str = r#"{
  "mixed": {
    "x1": {"type": "float", "default": 0.0, "transform": "None", "lower": -3.0, "upper": 3.0},
    "x2": {"type": "float", "default": 0.0, "transform": "None", "lower": -3.0, "upper": 3.0},
    "width": {"type": "int", "default": 4, "transform": "transform_power_2_int", "lower": 0, "upper": 8},
    "kernel": {"levels": ["linear", "poly", "rbf", "sigmoid"], "type": "factor", "default": "linear",
               "transform": "None", "core_model_parameter_type": "str", "lower": 0, "upper": 3}
  }
}"#;

pub fn mixed_space() -> SearchSpace {
    SearchSpace::parse_hyper_dict(MIXED_HYPER_DICT, "mixed").expect("built-in hyper-dict is valid")
}

impl Builtin {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sphere" => Ok(Builtin::Sphere),
            "mixed" => Ok(Builtin::Mixed),
            other => Err(Error::InvalidConfig(format!("unknown built-in objective `{other}`"))),
        }
    }

    pub fn value(self, config: &Config) -> Result<f64> {
        let num = |name: &str| -> Result<f64> {
            config
                .get(name)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::InvalidConfig(format!("objective needs numeric `{name}`")))
        };
        match self {
            Builtin::Sphere => Ok(config.iter().filter_map(|(_, v)| v.as_f64()).map(|v| v * v).sum()),
            Builtin::Mixed => {
                let level = config
                    .get("kernel")
                    .and_then(Value::as_level)
                    .ok_or_else(|| Error::InvalidConfig("objective needs level `kernel`".into()))?;
                let penalty = MIXED_LEVELS
                    .iter()
                    .find(|(l, _)| *l == level)
                    .map(|(_, p)| *p)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown kernel `{level}`")))?;
                let x1 = num("x1")?;
                let x2 = num("x2")?;
                let k = num("width")?.log2();
                Ok((x1 - 1.0).powi(2) + (x2 + 0.5).powi(2) + 0.25 * (k - 3.0).powi(2) + penalty)
            }
        }
    }
}

impl Objective for Builtin {
    fn evaluate(&mut self, config: &Config) -> Result<EvalResult> {
        Ok(EvalResult::new(self.value(config)?, f64::NAN))
    }
}
