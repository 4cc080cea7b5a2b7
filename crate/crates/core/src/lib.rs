//! Sequential parameter optimization for hyperparameter tuning.
//!
//! The crate is organised along the tuning workflow:
//!
//! * [`space`]: JSON hyper-dicts, bounds/levels modification and the mapping
//!   between internal numeric vectors and natural-unit configurations.
//! * [`design`]: Latin hypercube initial designs.
//! * [`kriging`]: the Kriging surrogate with budgeted likelihood fitting.
//! * [`tuner`]: the sequential loop (initial design, fit, infill, evaluate).
//! * [`optim`]: the ten-optimizer portfolio used by the built-in network.
//! * [`toynet`]: a small fully-connected classifier on synthetic data.
//! * [`harness`]: hold-out / cross-validation evaluation with early stopping.
//! * [`analysis`]: importance, progress, contour and parallel-coordinate exports.
//! * [`experiment`]: config-file driven runs used by the command-line front end.

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod design;
pub mod error;
pub mod experiment;
pub mod harness;
pub mod kriging;
pub mod objective;
pub mod optim;
pub mod space;
pub mod toynet;
pub mod tuner;
mod util;

pub use analysis::{ImportanceEntry, ImportanceReport};
pub use design::{DesignControl, DesignMatrix};
pub use error::{Error, Result};
pub use harness::{EvalResult, EvalSetting};
pub use kriging::{KrigingModel, SurrogateControl};
pub use objective::Objective;
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use space::{Config, ParamKind, ParamSpec, SearchSpace, Transform, Value};
pub use toynet::{Dataset, HyperConfig, ToyNet};
pub use tuner::{RunState, Spot, TunerConfig};
