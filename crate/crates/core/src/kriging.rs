//! Kriging surrogate.
//!
//! Ordinary Kriging with the squared-exponential correlation
//! `R_ij = exp(-Σ_k 10^θ_k (x_ik - x_jk)^2)` on inputs normalized to the
//! unit cube. The process mean and variance are concentrated out of the
//! likelihood; the activities `θ` (and, for noisy data, a nugget) are
//! chosen by a budgeted derivative-free search.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::design::{latin_hypercube, DesignControl};
use crate::error::{Error, Result};

/// Diagonal regularization used for interpolating (noise-free) models.
pub const JITTER_FLOOR: f64 = 1e-10;
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];
const LOG_NUGGET_BOUNDS: (f64, f64) = (-8.0, -1.0);
const SCREENING_SHARE: f64 = 0.8;
const GOLDEN_EVALS_PER_AXIS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodType {
    /// Min-max normalization of every input column.
    #[default]
    Norm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateControl {
    pub noise: bool,
    pub cod_type: CodType,
    /// Lower bound on `log10(θ)`.
    pub min_theta: f64,
    /// Upper bound on `log10(θ)`.
    pub max_theta: f64,
    /// Number of activities; `None` means one per input dimension.
    pub n_theta: Option<usize>,
    /// Likelihood evaluations allowed per fit.
    pub model_fun_evals: usize,
    pub log_level: u32,
}

impl Default for SurrogateControl {
    fn default() -> Self {
        Self {
            noise: false,
            cod_type: CodType::Norm,
            min_theta: -4.0,
            max_theta: 3.0,
            n_theta: None,
            model_fun_evals: 10_000,
            log_level: 50,
        }
    }
}

impl SurrogateControl {
    pub fn validate(&self, dims: usize) -> Result<()> {
        if !(self.min_theta < self.max_theta) {
            return Err(Error::InvalidControl(format!(
                "min_theta {} must be below max_theta {}",
                self.min_theta, self.max_theta
            )));
        }
        if self.model_fun_evals == 0 {
            return Err(Error::InvalidControl("model_fun_evals must be at least 1".into()));
        }
        if let Some(n) = self.n_theta {
            if n != dims {
                return Err(Error::InvalidControl(format!(
                    "n_theta {n} does not match {dims} active dimensions"
                )));
            }
        }
        Ok(())
    }
}

/// Pairwise squared coordinate differences, `pairs[(i, j)][k]` for `i < j`.
struct PairDiffs {
    n: usize,
    d: usize,
    diffs: Vec<f64>,
}

impl PairDiffs {
    fn new(x: &[Vec<f64>]) -> Self {
        let n = x.len();
        let d = x.first().map_or(0, Vec::len);
        let mut diffs = Vec::with_capacity(n * (n.saturating_sub(1)) / 2 * d);
        for i in 0..n {
            for j in (i + 1)..n {
                diffs.extend(x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)));
            }
        }
        Self { n, d, diffs }
    }

    fn correlation(&self, activity: &[f64], nugget: f64) -> DMatrix<f64> {
        let mut r = DMatrix::<f64>::identity(self.n, self.n);
        let mut chunks = self.diffs.chunks_exact(self.d.max(1));
        for i in 0..self.n {
            r[(i, i)] = 1.0 + nugget;
            for j in (i + 1)..self.n {
                let dist: f64 = if self.d == 0 {
                    0.0
                } else {
                    chunks
                        .next()
                        .expect("pair count")
                        .iter()
                        .zip(activity)
                        .map(|(s, a)| s * a)
                        .sum()
                };
                let c = (-dist).exp();
                r[(i, j)] = c;
                r[(j, i)] = c;
            }
        }
        r
    }
}

/// Concentrated quantities for one `(θ, nugget)`.
struct Concentrated {
    chol: Cholesky<f64, Dyn>,
    mu: f64,
    sigma2: f64,
    log_det: f64,
    /// `R⁻¹ (y - μ)`.
    alpha: DVector<f64>,
}

impl Concentrated {
    fn nll(&self, n: usize) -> f64 {
        n as f64 * self.sigma2.max(f64::MIN_POSITIVE).ln() + self.log_det
    }
}

fn concentrate(pairs: &PairDiffs, y: &[f64], theta_log10: &[f64], nugget: f64) -> Option<Concentrated> {
    let activity: Vec<f64> = theta_log10.iter().map(|t| 10f64.powf(*t)).collect();
    let r = pairs.correlation(&activity, nugget);
    let chol = r.cholesky()?;
    let n = y.len();
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let ones = DVector::from_element(n, 1.0);
    let yv = DVector::from_column_slice(y);
    let r_inv_one = chol.solve(&ones);
    let r_inv_y = chol.solve(&yv);
    let mu = r_inv_y.sum() / r_inv_one.sum();
    let resid = yv.add_scalar(-mu);
    let alpha = chol.solve(&resid);
    let sigma2 = (resid.dot(&alpha) / n as f64).max(0.0);
    if !(mu.is_finite() && sigma2.is_finite() && log_det.is_finite()) {
        return None;
    }
    Some(Concentrated {
        chol,
        mu,
        sigma2,
        log_det,
        alpha,
    })
}

/// Concentrated negative log-likelihood `n ln σ̂² + ln det R` on normalized
/// inputs. A correlation matrix that is not positive definite yields `+∞`.
pub fn neg_log_likelihood(x: &[Vec<f64>], y: &[f64], theta_log10: &[f64], nugget: f64) -> f64 {
    let pairs = PairDiffs::new(x);
    concentrate(&pairs, y, theta_log10, nugget).map_or(f64::INFINITY, |c| c.nll(y.len()))
}

/// Golden-section minimization of `f` on `[a, b]` using `evals` evaluations.
fn golden_section(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, evals: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 2..evals {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SearchResult {
    evals: usize,
    value: f64,
}

/// LHS screening followed by coordinate-wise golden-section refinement.
fn budgeted_minimize(
    bounds: &[(f64, f64)],
    budget: usize,
    seed: u64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Result<(Vec<f64>, SearchResult)> {
    let dims = bounds.len();
    let screen = ((budget as f64 * SCREENING_SHARE).floor() as usize).max(1);
    let design = latin_hypercube(
        &DesignControl {
            init_size: screen,
            repeats: 1,
            seed,
        },
        dims,
    )?;
    let mut best = Vec::new();
    let mut best_val = f64::INFINITY;
    for u in &design.rows {
        let p: Vec<f64> = u.iter().zip(bounds).map(|(t, (lo, hi))| lo + t * (hi - lo)).collect();
        let v = f(&p);
        if v < best_val || best.is_empty() {
            best_val = v;
            best = p;
        }
    }
    let mut evals = screen;
    let mut pass = 0;
    while best_val.is_finite() && budget.saturating_sub(evals) >= 2 {
        for k in 0..dims {
            let remaining = budget - evals;
            if remaining < 2 {
                break;
            }
            let m = remaining.min(GOLDEN_EVALS_PER_AXIS);
            let (lo, hi) = bounds[k];
            let half = 0.25 * (hi - lo) * 0.5f64.powi(pass);
            let a = (best[k] - half).max(lo);
            let b = (best[k] + half).min(hi);
            let mut probe = best.clone();
            let (xk, vk) = golden_section(
                |t| {
                    probe[k] = t;
                    f(&probe)
                },
                a,
                b,
                m,
            );
            evals += m;
            if vk < best_val {
                best_val = vk;
                best[k] = xk;
            }
        }
        pass += 1;
    }
    Ok((best, SearchResult { evals, value: best_val }))
}

/// A fitted Kriging model.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    /// Training inputs in normalized coordinates.
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    x_min: Vec<f64>,
    x_max: Vec<f64>,
    theta_log10: Vec<f64>,
    nugget: f64,
    noise: bool,
    mu: f64,
    sigma2: f64,
    likelihood_evals: usize,
    state: Option<Fitted>,
}

#[derive(Debug, Clone)]
struct Fitted {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

/// Serializable form of a [`KrigingModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigingSnapshot {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub theta_log10: Vec<f64>,
    pub nugget: f64,
    pub noise: bool,
    pub mu: f64,
    pub sigma2: f64,
}

fn check_data(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidControl("Kriging needs at least two observations".into()));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::InvalidControl(
            "Kriging needs at least one input dimension".into(),
        ));
    }
    if let Some(row) = x.iter().find(|r| r.len() != d) {
        return Err(Error::LengthMismatch {
            expected: d,
            actual: row.len(),
        });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("Kriging data must be finite".into()));
    }
    Ok(d)
}

impl KrigingModel {
    /// Fit activities (and the nugget when `control.noise`) by maximum
    /// likelihood within `control.model_fun_evals` likelihood evaluations.
    pub fn fit(x: &[Vec<f64>], y: &[f64], control: &SurrogateControl, seed: u64) -> Result<Self> {
        let d = check_data(x, y)?;
        control.validate(d)?;
        let (x_min, x_max) = column_ranges(x);
        let xn: Vec<Vec<f64>> = x.iter().map(|r| normalize_row(r, &x_min, &x_max)).collect();

        if y.iter().all(|v| *v == y[0]) {
            let mid = 0.5 * (control.min_theta + control.max_theta);
            return Ok(Self {
                x: xn,
                y: y.to_vec(),
                x_min,
                x_max,
                theta_log10: vec![mid; d],
                nugget: JITTER_FLOOR,
                noise: control.noise,
                mu: y[0],
                sigma2: 0.0,
                likelihood_evals: 0,
                state: None,
            });
        }

        let pairs = PairDiffs::new(&xn);
        let mut bounds = vec![(control.min_theta, control.max_theta); d];
        if control.noise {
            bounds.push(LOG_NUGGET_BOUNDS);
        }

        let mut floors = std::iter::once(JITTER_FLOOR).chain(JITTER_LADDER.into_iter().skip(1));
        loop {
            let Some(floor) = floors.next() else {
                return Err(Error::Factorization(*JITTER_LADDER.last().unwrap()));
            };
            let split = |p: &[f64]| -> (Vec<f64>, f64) {
                if control.noise {
                    (p[..d].to_vec(), 10f64.powf(p[d]) + floor)
                } else {
                    (p.to_vec(), floor)
                }
            };
            let (best, search) = budgeted_minimize(&bounds, control.model_fun_evals, seed, |p| {
                let (theta, nugget) = split(p);
                concentrate(&pairs, y, &theta, nugget).map_or(f64::INFINITY, |c| c.nll(y.len()))
            })?;
            if !search.value.is_finite() {
                continue;
            }
            let (theta, nugget) = split(&best);
            let mut model = Self::assemble(xn, y.to_vec(), x_min, x_max, theta, nugget, control.noise, &pairs)?;
            model.likelihood_evals = search.evals;
            return Ok(model);
        }
    }

    /// Build a model with given activities and nugget (no likelihood search).
    pub fn with_params(x: &[Vec<f64>], y: &[f64], theta_log10: &[f64], nugget: f64, noise: bool) -> Result<Self> {
        let d = check_data(x, y)?;
        if theta_log10.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                actual: theta_log10.len(),
            });
        }
        let (x_min, x_max) = column_ranges(x);
        let xn: Vec<Vec<f64>> = x.iter().map(|r| normalize_row(r, &x_min, &x_max)).collect();
        let pairs = PairDiffs::new(&xn);
        Self::assemble(
            xn,
            y.to_vec(),
            x_min,
            x_max,
            theta_log10.to_vec(),
            nugget,
            noise,
            &pairs,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        x_min: Vec<f64>,
        x_max: Vec<f64>,
        theta_log10: Vec<f64>,
        nugget: f64,
        noise: bool,
        pairs: &PairDiffs,
    ) -> Result<Self> {
        let c = concentrate(pairs, &y, &theta_log10, nugget).ok_or(Error::Factorization(nugget))?;
        Ok(Self {
            x,
            y,
            x_min,
            x_max,
            theta_log10,
            nugget,
            noise,
            mu: c.mu,
            sigma2: c.sigma2,
            likelihood_evals: 0,
            state: Some(Fitted {
                chol: c.chol,
                alpha: c.alpha,
            }),
        })
    }

    pub fn dims(&self) -> usize {
        self.x_min.len()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn theta_log10(&self) -> &[f64] {
        &self.theta_log10
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn noise(&self) -> bool {
        self.noise
    }

    /// Likelihood evaluations spent by [`fit`](Self::fit).
    pub fn likelihood_evals(&self) -> usize {
        self.likelihood_evals
    }

    /// Training inputs in normalized coordinates.
    pub fn normalized_inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    /// Normalize a point, clamping it into the training box.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        normalize_row(x, &self.x_min, &self.x_max)
    }

    /// Negative log-likelihood of this model's data at its own parameters.
    pub fn neg_log_likelihood(&self) -> f64 {
        neg_log_likelihood(&self.x, &self.y, &self.theta_log10, self.nugget)
    }

    /// Predicted mean and variance. Points outside the training box are
    /// clamped onto it.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        assert_eq!(x.len(), self.dims(), "prediction point dimension");
        let Some(state) = &self.state else {
            return (self.mu, 0.0);
        };
        let xn = self.normalize(x);
        let r = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|row| {
                let dist: f64 = row
                    .iter()
                    .zip(&xn)
                    .zip(&self.theta_log10)
                    .map(|((a, b), t)| 10f64.powf(*t) * (a - b) * (a - b))
                    .sum();
                (-dist).exp()
            }),
        );
        let mean = self.mu + r.dot(&state.alpha);
        let r_inv_r = state.chol.solve(&r);
        let extra = if self.noise { self.nugget } else { 0.0 };
        let var = (self.sigma2 * (1.0 + extra - r.dot(&r_inv_r))).max(0.0);
        (mean, var)
    }

    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        self.predict(x).0
    }

    pub fn snapshot(&self) -> KrigingSnapshot {
        KrigingSnapshot {
            x: self.x.clone(),
            y: self.y.clone(),
            x_min: self.x_min.clone(),
            x_max: self.x_max.clone(),
            theta_log10: self.theta_log10.clone(),
            nugget: self.nugget,
            noise: self.noise,
            mu: self.mu,
            sigma2: self.sigma2,
        }
    }

    /// Rebuild a model from a snapshot, refactorizing the correlation matrix.
    pub fn from_snapshot(s: KrigingSnapshot) -> Result<Self> {
        let constant = s.sigma2 == 0.0 && s.y.iter().all(|v| *v == s.y[0]);
        let state = if constant {
            None
        } else {
            let pairs = PairDiffs::new(&s.x);
            let c = concentrate(&pairs, &s.y, &s.theta_log10, s.nugget).ok_or(Error::Factorization(s.nugget))?;
            Some(Fitted {
                chol: c.chol,
                alpha: c.alpha,
            })
        };
        Ok(Self {
            x: s.x,
            y: s.y,
            x_min: s.x_min,
            x_max: s.x_max,
            theta_log10: s.theta_log10,
            nugget: s.nugget,
            noise: s.noise,
            mu: s.mu,
            sigma2: s.sigma2,
            likelihood_evals: 0,
            state,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.snapshot()).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_snapshot(serde_json::from_str(text)?)
    }
}

fn column_ranges(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for row in x {
        for (k, v) in row.iter().enumerate() {
            lo[k] = lo[k].min(*v);
            hi[k] = hi[k].max(*v);
        }
    }
    (lo, hi)
}

fn normalize_row(row: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (l, h))| if h > l { (v.clamp(*l, *h) - l) / (h - l) } else { 0.0 })
        .collect()
}
