//! The ten gradient optimizers of the tuning portfolio.
//!
//! Update rules follow the definitions implemented by
//! PyTorch's `torch.optim`, with the library defaults. [`optimizer_handler`]
//! maps a level name of the `optimizer` factor to a configuration and
//! applies `lr_mult` to the default learning rate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adadelta,
    Adagrad,
    Adam,
    AdamW,
    Adamax,
    #[serde(rename = "ASGD")]
    Asgd,
    NAdam,
    RAdam,
    #[serde(rename = "RMSprop")]
    RmsProp,
    #[serde(rename = "SGD")]
    Sgd,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 10] = [
        OptimizerKind::Adadelta,
        OptimizerKind::Adagrad,
        OptimizerKind::Adam,
        OptimizerKind::AdamW,
        OptimizerKind::Adamax,
        OptimizerKind::Asgd,
        OptimizerKind::NAdam,
        OptimizerKind::RAdam,
        OptimizerKind::RmsProp,
        OptimizerKind::Sgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adadelta => "Adadelta",
            OptimizerKind::Adagrad => "Adagrad",
            OptimizerKind::Adam => "Adam",
            OptimizerKind::AdamW => "AdamW",
            OptimizerKind::Adamax => "Adamax",
            OptimizerKind::Asgd => "ASGD",
            OptimizerKind::NAdam => "NAdam",
            OptimizerKind::RAdam => "RAdam",
            OptimizerKind::RmsProp => "RMSprop",
            OptimizerKind::Sgd => "SGD",
        }
    }

    /// Default learning rate. SGD has no library default; 1e-3 is used.
    /// For Adadelta this is the coefficient that scales delta.
    pub fn base_lr(self) -> f64 {
        match self {
            OptimizerKind::Adadelta => 1.0,
            OptimizerKind::Adagrad | OptimizerKind::Asgd | OptimizerKind::RmsProp => 1e-2,
            OptimizerKind::Adamax | OptimizerKind::NAdam => 2e-3,
            OptimizerKind::Adam | OptimizerKind::AdamW | OptimizerKind::RAdam | OptimizerKind::Sgd => 1e-3,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(kind) = Self::ALL.into_iter().find(|k| k.name() == s) {
            return Ok(kind);
        }
        match s {
            "LBFGS" => Err(Error::ExcludedOptimizer(
                s.into(),
                "memory intensive and needs a loss closure",
            )),
            "Rprop" => Err(Error::ExcludedOptimizer(s.into(), "performed poorly in pre-tests")),
            "SparseAdam" => Err(Error::ExcludedOptimizer(
                s.into(),
                "does not support dense gradients; use Adam",
            )),
            _ => Err(Error::UnknownOptimizer(s.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub base_lr: f64,
    pub lr_mult: f64,
    /// `base_lr * lr_mult`.
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Adadelta running-average coefficient.
    pub rho: f64,
    /// Adagrad learning-rate decay.
    pub lr_decay: f64,
    /// ASGD decay term.
    pub lambd: f64,
    /// ASGD eta power, RMSprop smoothing constant.
    pub alpha: f64,
    /// ASGD point at which averaging starts.
    pub t0: f64,
    pub momentum: f64,
    pub dampening: f64,
    pub nesterov: bool,
    /// NAdam momentum decay.
    pub momentum_decay: f64,
}

/// Configure `name` with its defaults, scaling the learning rate by
/// `lr_mult`. `sgd_momentum` only affects SGD.
pub fn optimizer_handler(name: &str, lr_mult: f64, sgd_momentum: f64) -> Result<OptimizerConfig> {
    let kind: OptimizerKind = name.parse()?;
    if !(lr_mult.is_finite() && lr_mult > 0.0) {
        return Err(Error::InvalidControl(format!(
            "lr_mult must be positive, got {lr_mult}"
        )));
    }
    let base_lr = kind.base_lr();
    let mut cfg = OptimizerConfig {
        kind,
        base_lr,
        lr_mult,
        lr: base_lr * lr_mult,
        weight_decay: 0.0,
        betas: (0.9, 0.999),
        eps: 1e-8,
        rho: 0.9,
        lr_decay: 0.0,
        lambd: 1e-4,
        alpha: 0.75,
        t0: 1e6,
        momentum: 0.0,
        dampening: 0.0,
        nesterov: false,
        momentum_decay: 0.0,
    };
    match kind {
        OptimizerKind::Adadelta => cfg.eps = 1e-6,
        OptimizerKind::Adagrad => cfg.eps = 1e-10,
        OptimizerKind::AdamW => cfg.weight_decay = 1e-2,
        // Stored only; the averaging rule does not use them.
        OptimizerKind::Asgd => cfg.momentum = 0.9,
        OptimizerKind::RmsProp => cfg.alpha = 0.99,
        OptimizerKind::Sgd => {
            if !(0.0..=1.0).contains(&sgd_momentum) {
                return Err(Error::InvalidControl(format!(
                    "sgd_momentum must lie in [0, 1], got {sgd_momentum}"
                )));
            }
            cfg.momentum = sgd_momentum;
        }
        _ => {}
    }
    Ok(cfg)
}

/// Per-parameter buffers. Which ones are used depends on the kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    /// First moment / SGD momentum buffer / Adagrad sum.
    pub first: Vec<f64>,
    /// Second moment / infinity norm / Adadelta squared-gradient average.
    pub second: Vec<f64>,
    /// Adadelta squared-delta average / ASGD averaged iterate.
    pub aux: Vec<f64>,
    /// ASGD step size.
    pub eta: f64,
    /// ASGD averaging weight.
    pub mu: f64,
    /// NAdam running product of momentum coefficients.
    pub mu_product: f64,
    has_momentum_buffer: bool,
}

impl OptimizerState {
    pub fn new(config: &OptimizerConfig, len: usize) -> Self {
        Self {
            step: 0,
            first: vec![0.0; len],
            second: vec![0.0; len],
            aux: vec![0.0; len],
            eta: config.lr,
            mu: 1.0,
            mu_product: 1.0,
            has_momentum_buffer: false,
        }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }
}

/// Apply one update to `params` in place.
// Index loops keep the per-coordinate updates close to their textbook form.
#[allow(clippy::needless_range_loop)]
pub fn step(config: &OptimizerConfig, state: &mut OptimizerState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    if state.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: state.len(),
            actual: params.len(),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(i));
    }
    state.step += 1;
    let t = state.step as f64;
    let lr = config.lr;
    let wd = config.weight_decay;
    let (b1, b2) = config.betas;
    let eps = config.eps;
    // Coupled L2 penalty; AdamW decays the weights directly instead.
    let grad = |i: usize, p: f64| {
        if wd != 0.0 && config.kind != OptimizerKind::AdamW {
            grads[i] + wd * p
        } else {
            grads[i]
        }
    };

    match config.kind {
        OptimizerKind::Sgd => {
            let m = config.momentum;
            for i in 0..params.len() {
                let mut g = grad(i, params[i]);
                if m != 0.0 {
                    let buf = &mut state.first[i];
                    *buf = if state.has_momentum_buffer {
                        m * *buf + (1.0 - config.dampening) * g
                    } else {
                        g
                    };
                    g = if config.nesterov { g + m * *buf } else { *buf };
                }
                params[i] -= lr * g;
            }
            state.has_momentum_buffer = true;
        }
        OptimizerKind::Adadelta => {
            let rho = config.rho;
            for i in 0..params.len() {
                let g = grad(i, params[i]);
                let sq = &mut state.second[i];
                *sq = rho * *sq + (1.0 - rho) * g * g;
                let delta = (state.aux[i] + eps).sqrt() / (*sq + eps).sqrt() * g;
                state.aux[i] = rho * state.aux[i] + (1.0 - rho) * delta * delta;
                params[i] -= lr * delta;
            }
        }
        OptimizerKind::Adagrad => {
            let clr = lr / (1.0 + (t - 1.0) * config.lr_decay);
            for i in 0..params.len() {
                let g = grad(i, params[i]);
                state.first[i] += g * g;
                params[i] -= clr * g / (state.first[i].sqrt() + eps);
            }
        }
        OptimizerKind::Adam | OptimizerKind::AdamW => {
            let bc1 = 1.0 - b1.powf(t);
            let bc2_sqrt = (1.0 - b2.powf(t)).sqrt();
            for i in 0..params.len() {
                if config.kind == OptimizerKind::AdamW {
                    params[i] *= 1.0 - lr * wd;
                }
                let g = grad(i, params[i]);
                state.first[i] = b1 * state.first[i] + (1.0 - b1) * g;
                state.second[i] = b2 * state.second[i] + (1.0 - b2) * g * g;
                let denom = state.second[i].sqrt() / bc2_sqrt + eps;
                params[i] -= lr / bc1 * state.first[i] / denom;
            }
        }
        OptimizerKind::Adamax => {
            let clr = lr / (1.0 - b1.powf(t));
            for i in 0..params.len() {
                let g = grad(i, params[i]);
                state.first[i] = b1 * state.first[i] + (1.0 - b1) * g;
                state.second[i] = (b2 * state.second[i]).max(g.abs() + eps);
                params[i] -= clr * state.first[i] / state.second[i];
            }
        }
        OptimizerKind::Asgd => {
            let eta = state.eta;
            for i in 0..params.len() {
                let g = grad(i, params[i]);
                params[i] *= 1.0 - config.lambd * eta;
                params[i] -= eta * g;
                if state.mu != 1.0 {
                    state.aux[i] += (params[i] - state.aux[i]) * state.mu;
                } else {
                    state.aux[i] = params[i];
                }
            }
            state.eta = lr / (1.0 + config.lambd * lr * t).powf(config.alpha);
            state.mu = 1.0 / (t - config.t0).max(1.0);
        }
        OptimizerKind::NAdam => {
            let bc2 = 1.0 - b2.powf(t);
            let psi = config.momentum_decay;
            let mu = b1 * (1.0 - 0.5 * 0.96f64.powf(t * psi));
            let mu_next = b1 * (1.0 - 0.5 * 0.96f64.powf((t + 1.0) * psi));
            state.mu_product *= mu;
            let mu_product = state.mu_product;
            for i in 0..params.len() {
                let g = grad(i, params[i]);
                state.first[i] = b1 * state.first[i] + (1.0 - b1) * g;
                state.second[i] = b2 * state.second[i] + (1.0 - b2) * g * g;
                let denom = (state.second[i] / bc2).sqrt() + eps;
                params[i] -= lr * (1.0 - mu) / (1.0 - mu_product) * g / denom;
                params[i] -= lr * mu_next / (1.0 - mu_product * mu_next) * state.first[i] / denom;
            }
        }
        OptimizerKind::RAdam => {
            let bc1 = 1.0 - b1.powf(t);
            let bc2 = 1.0 - b2.powf(t);
            let rho_inf = 2.0 / (1.0 - b2) - 1.0;
            let rho_t = rho_inf - 2.0 * t * b2.powf(t) / bc2;
            let rect = (rho_t > 5.0).then(|| {
                ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
            });
            for i in 0..params.len() {
                let g = grad(i, params[i]);
                state.first[i] = b1 * state.first[i] + (1.0 - b1) * g;
                state.second[i] = b2 * state.second[i] + (1.0 - b2) * g * g;
                let m_hat = state.first[i] / bc1;
                params[i] -= match rect {
                    Some(r) => m_hat * lr * bc2.sqrt() / (state.second[i].sqrt() + eps) * r,
                    None => m_hat * lr,
                };
            }
        }
        OptimizerKind::RmsProp => {
            let a = config.alpha;
            for i in 0..params.len() {
                let g = grad(i, params[i]);
                state.second[i] = a * state.second[i] + (1.0 - a) * g * g;
                let avg = state.second[i].sqrt() + eps;
                if config.momentum > 0.0 {
                    state.first[i] = config.momentum * state.first[i] + g / avg;
                    params[i] -= lr * state.first[i];
                } else {
                    params[i] -= lr * g / avg;
                }
            }
        }
    }
    Ok(())
}

/// Scale `grads` in place so their Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(name: &str, lr_mult: f64, momentum: f64, params: &mut [f64], grads: &[&[f64]]) {
        let cfg = optimizer_handler(name, lr_mult, momentum).unwrap();
        let mut st = OptimizerState::new(&cfg, params.len());
        for g in grads {
            step(&cfg, &mut st, params, g).unwrap();
        }
    }

    #[test]
    fn handler_defaults() {
        let adam = optimizer_handler("Adam", 1.0, 0.9).unwrap();
        assert_eq!(adam.lr, 1e-3);
        assert_eq!(adam.betas, (0.9, 0.999));
        assert_eq!(adam.momentum, 0.0);
        let ada = optimizer_handler("Adadelta", 1.0, 0.0).unwrap();
        assert_eq!((ada.rho, ada.lr), (0.9, 1.0));
        let sgd = optimizer_handler("SGD", 1.0, 0.9).unwrap();
        assert_eq!((sgd.lr, sgd.momentum), (1e-3, 0.9));
        let adamw = optimizer_handler("AdamW", 2.0, 0.0).unwrap();
        assert_eq!((adamw.lr, adamw.weight_decay), (2e-3, 1e-2));
        let asgd = optimizer_handler("ASGD", 1.0, 0.0).unwrap();
        assert_eq!((asgd.lr, asgd.lambd, asgd.alpha), (1e-2, 1e-4, 0.75));
    }

    #[test]
    fn handler_rejects_unknown_and_excluded() {
        for name in ["LBFGS", "Rprop", "SparseAdam"] {
            assert!(matches!(
                optimizer_handler(name, 1.0, 0.0),
                Err(Error::ExcludedOptimizer(..))
            ));
        }
        assert!(matches!(
            optimizer_handler("adam", 1.0, 0.0),
            Err(Error::UnknownOptimizer(_))
        ));
        assert!(optimizer_handler("Adam", 0.0, 0.0).is_err());
    }

    #[test]
    fn plain_sgd_step() {
        let mut w = [1.0];
        run("SGD", 100.0, 0.0, &mut w, &[&[2.0]]);
        assert!((w[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adamw_decays_adam_does_not() {
        let mut a = [1.0];
        run("Adam", 1.0, 0.0, &mut a, &[&[0.0]]);
        assert_eq!(a[0], 1.0);
        let mut w = [1.0];
        run("AdamW", 1.0, 0.0, &mut w, &[&[0.0]]);
        assert!((w[0] - (1.0 - 1e-3 * 1e-2)).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let cfg = optimizer_handler("Adam", 1.0, 0.0).unwrap();
        let mut st = OptimizerState::new(&cfg, 2);
        let mut w = [1.0, 2.0];
        assert!(step(&cfg, &mut st, &mut w, &[1.0]).is_err());
        assert!(matches!(
            step(&cfg, &mut st, &mut w, &[1.0, f64::NAN]),
            Err(Error::NonFiniteGradient(1))
        ));
        assert_eq!(st.step, 0);
        assert_eq!(w, [1.0, 2.0]);
    }

    /// Two-step trajectories from w = [1, -0.5] with gradients [0.3, -2.0]
    /// then [0.1, 0.4], recorded from the reference `torch.optim`
    /// implementation with float64 as the default dtype, so scalar state
    /// such as ASGD's eta is not rounded to float32 (NAdam with
    /// momentum_decay = 0, SGD with momentum 0.9).
    #[test]
    fn matches_reference_trajectories() {
        let reference: [(&str, [[f64; 2]; 2]); 10] = [
            (
                "Adadelta",
                [
                    [0.9968378980072851, -0.4968377262926713],
                    [0.995355521997471, -0.49776025569735244],
                ],
            ),
            (
                "Adagrad",
                [
                    [0.9900000000033333, -0.4900000000005],
                    [0.9868377223441649, -0.4919611613517857],
                ],
            ),
            (
                "Adam",
                [
                    [0.9990000000333333, -0.499000000005],
                    [0.9981289361215719, -0.4984889739313608],
                ],
            ),
            (
                "AdamW",
                [
                    [0.9989900000333334, -0.498995000005],
                    [0.9981089462215716, -0.4984789839813608],
                ],
            ),
            (
                "Adamax",
                [
                    [0.9980000000666667, -0.49800000001],
                    [0.9967004549507905, -0.4972624203287398],
                ],
            ),
            (
                "ASGD",
                [
                    [0.996999, -0.47999949999999997],
                    [0.9959980037517472, -0.4839990170008626],
                ],
            ),
            (
                "NAdam",
                [
                    [0.9978871474058516, -0.49788714734598744],
                    [0.9971062915820469, -0.49817364071943576],
                ],
            ),
            ("RAdam", [[0.9997, -0.498], [0.9995052631578948, -0.49726315789473685]]),
            (
                "RMSprop",
                [
                    [0.9000000333333222, -0.40000000499999977],
                    [0.8682339965246466, -0.41970658959241186],
                ],
            ),
            ("SGD", [[0.9997, -0.498], [0.99933, -0.4966]]),
        ];
        for (name, expected) in reference {
            let cfg = optimizer_handler(name, 1.0, 0.9).unwrap();
            let mut st = OptimizerState::new(&cfg, 2);
            let mut w = [1.0, -0.5];
            for (g, exp) in [[0.3, -2.0], [0.1, 0.4]].iter().zip(expected) {
                step(&cfg, &mut st, &mut w, g).unwrap();
                for k in 0..2 {
                    assert!((w[k] - exp[k]).abs() < 1e-12, "{name}: {} vs {}", w[k], exp[k]);
                }
            }
        }
    }

    #[test]
    fn clipping() {
        let mut g = [3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        let n = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        let mut small = [0.3, 0.4];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small, [0.3, 0.4]);
    }
}
