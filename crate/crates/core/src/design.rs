//! Space-filling initial designs.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignControl {
    pub init_size: usize,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl Default for DesignControl {
    fn default() -> Self {
        Self {
            init_size: 10,
            repeats: 1,
            seed: 0,
        }
    }
}

impl DesignControl {
    pub fn validate(&self) -> Result<()> {
        if self.init_size == 0 || self.repeats == 0 {
            return Err(Error::InvalidControl(
                "design init_size and repeats must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Points in the unit cube, one row per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl DesignMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if let Some(first) = self.rows.first() {
            let header: Vec<String> = (0..first.len()).map(|j| format!("x{j}")).collect();
            w.write_record(&header).expect("in-memory csv");
        }
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:?}")))
                .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
    }
}

/// Latin hypercube sample of `init_size` base points in `[0, 1]^dims`, each
/// repeated `repeats` times consecutively.
///
/// Every one-dimensional projection of the base points has exactly one point
/// in each stratum `[i/n, (i+1)/n)`. Points are jittered uniformly inside
/// their cell, except for `n == 1`, which uses the cube's centre.
pub fn latin_hypercube(control: &DesignControl, dims: usize) -> Result<DesignMatrix> {
    control.validate()?;
    if dims < 1 {
        return Err(Error::InvalidControl("design needs at least one dimension".into()));
    }
    let n = control.init_size;
    let mut rng = util::rng(control.seed, 0x1d5);
    let mut base = vec![vec![0.0; dims]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..dims {
        perm.shuffle(&mut rng);
        for (i, row) in base.iter_mut().enumerate() {
            let jitter: f64 = if n == 1 { 0.5 } else { rng.random() };
            // Keep the point strictly inside its stratum even after rounding.
            let v = (perm[i] as f64 + jitter) / n as f64;
            row[j] = v.min((perm[i] + 1) as f64 / n as f64 - f64::EPSILON);
        }
    }
    let rows = base
        .into_iter()
        .flat_map(|row| std::iter::repeat_n(row, control.repeats))
        .collect();
    Ok(DesignMatrix { rows })
}
