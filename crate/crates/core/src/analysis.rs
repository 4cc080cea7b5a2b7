//! Post-run statistics: variable importance from the fitted activities and
//! data exports for progress, contour and parallel-coordinate plots.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kriging::KrigingModel;
use crate::space::SearchSpace;
use crate::tuner::RunState;

/// Significance-style code for an importance on the 0-100 scale.
pub fn stars(importance: f64) -> &'static str {
    if importance >= 95.0 {
        "***"
    } else if importance >= 50.0 {
        "**"
    } else if importance >= 1.0 {
        "*"
    } else if importance >= 0.1 {
        "."
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub name: String,
    pub importance: f64,
    pub stars: String,
    /// Fixed parameters carry no activity and report 0.
    pub active: bool,
}

/// Importance of every parameter of a space, in space order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceReport {
    /// Importance `100 · 10^θ_i / max_j 10^θ_j` over the active dimensions,
    /// where `theta_log10` has one entry per active parameter.
    pub fn from_theta(space: &SearchSpace, theta_log10: &[f64]) -> Result<Self> {
        if theta_log10.len() != space.active_dims() {
            return Err(Error::LengthMismatch {
                expected: space.active_dims(),
                actual: theta_log10.len(),
            });
        }
        let max = theta_log10.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut theta = theta_log10.iter();
        let entries = space
            .params()
            .iter()
            .map(|p| {
                let (importance, active) = if p.is_fixed() {
                    (0.0, false)
                } else {
                    let t = theta.next().expect("one theta per active parameter");
                    (100.0 * 10f64.powf(t - max), true)
                };
                ImportanceEntry {
                    name: p.name.clone(),
                    importance,
                    stars: stars(importance).to_string(),
                    active,
                }
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn get(&self, name: &str) -> Option<&ImportanceEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Active entries sorted by decreasing importance (stable on ties).
    pub fn ranked(&self) -> Vec<&ImportanceEntry> {
        let mut v: Vec<&ImportanceEntry> = self.entries.iter().filter(|e| e.active).collect();
        v.sort_by(|a, b| b.importance.total_cmp(&a.importance));
        v
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "importance", "stars"]).expect("in-memory csv");
        for e in &self.entries {
            w.write_record([e.name.as_str(), &format!("{:.2}", e.importance), &e.stars])
                .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
    }
}

impl fmt::Display for ImportanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{:<16} {:>7.2} {}", e.name, e.importance, e.stars)?;
        }
        Ok(())
    }
}

/// Importance report of a surrogate fitted on the active dimensions.
pub fn importance(model: &KrigingModel, space: &SearchSpace) -> Result<ImportanceReport> {
    ImportanceReport::from_theta(space, model.theta_log10())
}

/// All unordered pairs of active parameters whose importance exceeds
/// `threshold` expressed on the 0-100 scale (`0.025` means 2.5).
pub fn select_important_pairs(report: &ImportanceReport, threshold: f64) -> Vec<(String, String)> {
    let cut = threshold * 100.0;
    let names: Vec<&str> = report
        .entries
        .iter()
        .filter(|e| e.active && e.importance > cut)
        .map(|e| e.name.as_str())
        .collect();
    let mut pairs = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            pairs.push((a.to_string(), b.to_string()));
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgressRow {
    pub iter: usize,
    pub y: f64,
    pub best: f64,
    pub phase: &'static str,
}

pub fn export_progress(state: &RunState) -> Result<Vec<ProgressRow>> {
    if state.is_empty() {
        return Err(Error::EmptyState);
    }
    Ok(state
        .history
        .iter()
        .zip(state.best_so_far())
        .map(|(r, best)| ProgressRow {
            iter: r.iteration,
            y: r.y,
            best,
            phase: r.phase.as_str(),
        })
        .collect())
}

pub fn progress_csv(rows: &[ProgressRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iter", "y", "best", "phase"]).expect("in-memory csv");
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            format!("{:?}", r.y),
            format!("{:?}", r.best),
            r.phase.to_string(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

/// Surrogate means over a grid of two parameters (internal units).
#[derive(Debug, Clone, PartialEq)]
pub struct ContourGrid {
    pub a: String,
    pub b: String,
    /// `(a, b, mean)` with `a` varying slowest.
    pub cells: Vec<(f64, f64, f64)>,
}

impl ContourGrid {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([self.a.as_str(), self.b.as_str(), "mean"])
            .expect("in-memory csv");
        for (a, b, m) in &self.cells {
            w.write_record([format!("{a:?}"), format!("{b:?}"), format!("{m:?}")])
                .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
    }
}

/// Axis values for a contour grid; integer and factor axes are rounded onto
/// their lattice.
fn axis(space: &SearchSpace, index: usize, grid: usize) -> Vec<f64> {
    let p = &space.params()[index];
    (0..grid)
        .map(|i| {
            let v = p.lower + (p.upper - p.lower) * i as f64 / (grid - 1) as f64;
            if p.kind.is_integral() {
                v.round()
            } else {
                v
            }
        })
        .collect()
}

/// Predict the surrogate mean on a `grid x grid` lattice over two active
/// parameters with all other dimensions held at `fixed_at` (a full internal
/// vector, usually the best point).
pub fn export_contour(
    model: &KrigingModel,
    space: &SearchSpace,
    pair: (&str, &str),
    grid: usize,
    fixed_at: &[f64],
) -> Result<ContourGrid> {
    if grid < 2 {
        return Err(Error::InvalidControl(
            "contour grid needs at least 2 points per axis".into(),
        ));
    }
    if fixed_at.len() != space.len() {
        return Err(Error::LengthMismatch {
            expected: space.len(),
            actual: fixed_at.len(),
        });
    }
    let index = |name: &str| -> Result<usize> {
        let i = space
            .index_of(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if space.params()[i].is_fixed() {
            return Err(Error::InvalidConfig(format!(
                "`{name}` is fixed and has no contour axis"
            )));
        }
        Ok(i)
    };
    let (ia, ib) = (index(pair.0)?, index(pair.1)?);
    if ia == ib {
        return Err(Error::InvalidConfig("contour pair must name two parameters".into()));
    }
    let mut point = fixed_at.to_vec();
    let mut cells = Vec::with_capacity(grid * grid);
    for &a in &axis(space, ia, grid) {
        for &b in &axis(space, ib, grid) {
            point[ia] = a;
            point[ib] = b;
            cells.push((a, b, model.predict_mean(&space.project_active(&point))));
        }
    }
    Ok(ContourGrid {
        a: pair.0.to_string(),
        b: pair.1.to_string(),
        cells,
    })
}

/// Evaluated configurations normalized per parameter to `[0, 1]`, with
/// their losses. Fixed parameters map to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelTable {
    pub names: Vec<String>,
    pub rows: Vec<(Vec<f64>, f64)>,
}

impl ParallelTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.names.clone();
        header.push("y".into());
        w.write_record(&header).expect("in-memory csv");
        for (x, y) in &self.rows {
            w.write_record(x.iter().chain([y]).map(|v| format!("{v:?}")))
                .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
    }
}

pub fn export_parallel(state: &RunState, space: &SearchSpace) -> Result<ParallelTable> {
    if state.is_empty() {
        return Err(Error::EmptyState);
    }
    let rows = state
        .x
        .iter()
        .zip(&state.y)
        .map(|(x, &y)| {
            let u = space
                .params()
                .iter()
                .zip(x)
                .map(|(p, v)| {
                    if p.is_fixed() {
                        0.0
                    } else {
                        (v - p.lower) / (p.upper - p.lower)
                    }
                })
                .collect();
            (u, y)
        })
        .collect();
    Ok(ParallelTable {
        names: space.params().iter().map(|p| p.name.clone()).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_thresholds() {
        let cases = [
            (100.0, "***"),
            (96.29, "***"),
            (95.0, "***"),
            (94.99, "**"),
            (50.0, "**"),
            (4.18, "*"),
            (1.0, "*"),
            (0.16, "."),
            (0.1, "."),
            (0.09, ""),
            (0.0, ""),
        ];
        for (v, s) in cases {
            assert_eq!(stars(v), s, "{v}");
        }
    }
}
