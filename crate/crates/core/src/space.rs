//! Hyperparameter search spaces.
//!
//! A [`SearchSpace`] is loaded from a JSON hyper-dict keyed by model name.
//! Every parameter lives on an *internal* numeric axis (integers for `int`
//! and `bool`, level indices for `factor`, reals for `float`) and is mapped
//! to its *natural* value by [`ParamSpec::decode`], e.g. `l1 = 5` becomes
//! `2^5 = 32` under `transform_power_2_int`.
//!
//! A parameter whose lower and upper bound coincide (or a factor with a
//! single level) is fixed: it is excluded from the tuned dimensions and
//! always decodes to its fixed value.

use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::ImportanceReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Int,
    Float,
    /// An `int` restricted to bounds within `{0, 1}`.
    Bool,
    Factor,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::Int => "int",
            ParamKind::Float => "float",
            ParamKind::Bool => "bool",
            ParamKind::Factor => "factor",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "int" => Some(ParamKind::Int),
            "float" => Some(ParamKind::Float),
            "bool" | "boolean" => Some(ParamKind::Bool),
            "factor" => Some(ParamKind::Factor),
            _ => None,
        }
    }

    /// Whether the internal axis is an integer lattice.
    pub fn is_integral(self) -> bool {
        !matches!(self, ParamKind::Float)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transform {
    None,
    Power2Int,
}

impl Transform {
    pub fn as_str(self) -> &'static str {
        match self {
            Transform::None => "None",
            Transform::Power2Int => "transform_power_2_int",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "None" => Ok(Transform::None),
            "transform_power_2_int" => Ok(Transform::Power2Int),
            other => Err(Error::UnknownTransform(other.to_string())),
        }
    }
}

/// A natural-unit parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Level(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            Value::Level(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            Value::Float(v) if v.fract() == 0.0 => Some(*v as i64),
            _ => None,
        }
    }

    pub fn as_level(&self) -> Option<&str> {
        match self {
            Value::Level(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Level(s) => f.write_str(s),
        }
    }
}

/// A natural-unit configuration, ordered like the search space.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Config(IndexMap<String, Value>);

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Value) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialization is infallible")
    }
}

/// One hyperparameter. `default` is always inside the bounds;
/// `declared_default` is the value as written in the hyper-dict and is what
/// design tables report.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub default: Value,
    pub declared_default: Value,
    pub transform: Transform,
    pub lower: f64,
    pub upper: f64,
    /// Active levels (factor only).
    pub levels: Vec<String>,
    /// Levels the factor may be re-configured with.
    pub level_universe: Vec<String>,
    /// `core_model_parameter_type`, stored but unused.
    pub value_type: Option<String>,
    /// `class_name`, stored but unused.
    pub class_name: Option<String>,
}

impl ParamSpec {
    pub fn is_fixed(&self) -> bool {
        self.lower == self.upper
    }

    /// Internal value of the default.
    pub fn default_internal(&self) -> f64 {
        match &self.default {
            Value::Level(level) => self.level_index(level).unwrap_or(0) as f64,
            v => v.as_f64().unwrap_or(self.lower),
        }
    }

    pub fn level_index(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }

    /// Map an internal value to its natural value.
    ///
    /// Integer and factor axes round to the nearest lattice point first; the
    /// rounded value must lie inside the bounds.
    pub fn decode(&self, raw: f64) -> Result<Value> {
        let out_of_bounds = || Error::OutOfBounds {
            name: self.name.clone(),
            value: raw,
            lower: self.lower,
            upper: self.upper,
        };
        if !raw.is_finite() {
            return Err(out_of_bounds());
        }
        match self.kind {
            ParamKind::Float => {
                let tol = 1e-12 * (1.0 + self.lower.abs().max(self.upper.abs()));
                if raw < self.lower - tol || raw > self.upper + tol {
                    return Err(out_of_bounds());
                }
                Ok(Value::Float(raw.clamp(self.lower, self.upper)))
            }
            ParamKind::Int | ParamKind::Bool => {
                let k = raw.round();
                if k < self.lower || k > self.upper {
                    return Err(out_of_bounds());
                }
                Ok(match self.transform {
                    Transform::None => Value::Int(k as i64),
                    Transform::Power2Int => Value::Int(1_i64 << (k as u32)),
                })
            }
            ParamKind::Factor => {
                let k = raw.round();
                if k < 0.0 || k > self.upper {
                    return Err(out_of_bounds());
                }
                Ok(Value::Level(self.levels[k as usize].clone()))
            }
        }
    }

    /// Inverse of [`decode`](Self::decode).
    pub fn encode(&self, value: &Value) -> Result<f64> {
        let bad = |reason: &str| Error::InvalidConfig(format!("`{}`: {reason}", self.name));
        let raw = match self.kind {
            ParamKind::Factor => {
                let level = value.as_level().ok_or_else(|| bad("expected a level name"))?;
                self.level_index(level)
                    .ok_or_else(|| bad(&format!("unknown level `{level}`")))? as f64
            }
            ParamKind::Float => value.as_f64().ok_or_else(|| bad("expected a number"))?,
            ParamKind::Int | ParamKind::Bool => {
                let n = value.as_i64().ok_or_else(|| bad("expected an integer"))?;
                match self.transform {
                    Transform::None => n as f64,
                    Transform::Power2Int => {
                        if n <= 0 || (n & (n - 1)) != 0 {
                            return Err(bad(&format!("{n} is not a power of two")));
                        }
                        n.trailing_zeros() as f64
                    }
                }
            }
        };
        // Round-trip through decode for the bounds check.
        self.decode(raw)?;
        Ok(raw)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite()) {
            return Err(Error::malformed(&self.name, "bounds must be finite"));
        }
        if self.lower > self.upper {
            return Err(Error::malformed(
                &self.name,
                format!("lower {} > upper {}", self.lower, self.upper),
            ));
        }
        check_integral_bounds(self, self.lower, self.upper).map_err(|reason| Error::malformed(&self.name, reason))
    }
}

fn check_integral_bounds(spec: &ParamSpec, lower: f64, upper: f64) -> std::result::Result<(), String> {
    if spec.kind.is_integral() && (lower.fract() != 0.0 || upper.fract() != 0.0) {
        return Err("integer bounds must be whole numbers".into());
    }
    if spec.kind == ParamKind::Bool && (lower < 0.0 || upper > 1.0) {
        return Err("bool bounds must lie within {0, 1}".into());
    }
    if spec.transform == Transform::Power2Int {
        if spec.kind == ParamKind::Float || spec.kind == ParamKind::Factor {
            return Err("transform_power_2_int applies to int parameters only".into());
        }
        if lower < 0.0 || upper > 62.0 {
            return Err("transform_power_2_int exponents must lie within [0, 62]".into());
        }
    }
    Ok(())
}

fn clamp_default(spec: &ParamSpec, declared: &Value) -> Value {
    match (spec.kind, declared) {
        (ParamKind::Factor, Value::Level(l)) if spec.level_index(l).is_some() => declared.clone(),
        (ParamKind::Factor, _) => Value::Level(spec.levels[0].clone()),
        (ParamKind::Float, v) => Value::Float(v.as_f64().unwrap_or(spec.lower).clamp(spec.lower, spec.upper)),
        (_, v) => Value::Int(v.as_f64().unwrap_or(spec.lower).clamp(spec.lower, spec.upper) as i64),
    }
}

#[derive(Deserialize)]
struct RawParam {
    #[serde(rename = "type")]
    kind: String,
    default: serde_json::Value,
    #[serde(default)]
    transform: Option<String>,
    lower: Option<f64>,
    upper: Option<f64>,
    levels: Option<Vec<String>>,
    core_model_parameter_type: Option<String>,
    class_name: Option<String>,
}

fn parse_param(name: &str, entry: &serde_json::Value) -> Result<ParamSpec> {
    let raw: RawParam = serde_json::from_value(entry.clone()).map_err(|e| Error::malformed(name, e.to_string()))?;
    let kind =
        ParamKind::parse(&raw.kind).ok_or_else(|| Error::malformed(name, format!("unknown type `{}`", raw.kind)))?;
    let transform = match raw.transform.as_deref() {
        None => Transform::None,
        Some(t) => Transform::parse(t)?,
    };

    let (lower, upper, levels) = if kind == ParamKind::Factor {
        let levels = raw.levels.unwrap_or_default();
        if levels.is_empty() {
            return Err(Error::malformed(name, "factor requires a non-empty level list"));
        }
        let upper = (levels.len() - 1) as f64;
        if raw.lower.is_some_and(|l| l != 0.0) || raw.upper.is_some_and(|u| u != upper) {
            return Err(Error::malformed(
                name,
                format!("factor bounds must be [0, {upper}] for {} levels", levels.len()),
            ));
        }
        (0.0, upper, levels)
    } else {
        let lower = raw.lower.ok_or_else(|| Error::malformed(name, "missing `lower`"))?;
        let upper = raw.upper.ok_or_else(|| Error::malformed(name, "missing `upper`"))?;
        (lower, upper, Vec::new())
    };

    let declared_default = match kind {
        ParamKind::Factor => match &raw.default {
            serde_json::Value::String(s) if levels.contains(s) => Value::Level(s.clone()),
            other => return Err(Error::malformed(name, format!("default {other} is not a level"))),
        },
        ParamKind::Float => Value::Float(
            raw.default
                .as_f64()
                .ok_or_else(|| Error::malformed(name, "default must be a number"))?,
        ),
        ParamKind::Int | ParamKind::Bool => {
            let v = raw
                .default
                .as_f64()
                .filter(|v| v.fract() == 0.0)
                .ok_or_else(|| Error::malformed(name, "default must be an integer"))?;
            Value::Int(v as i64)
        }
    };

    let mut spec = ParamSpec {
        name: name.to_string(),
        kind,
        default: declared_default.clone(),
        declared_default,
        transform,
        lower,
        upper,
        level_universe: levels.clone(),
        levels,
        value_type: raw.core_model_parameter_type,
        class_name: raw.class_name,
    };
    spec.validate()?;
    spec.default = clamp_default(&spec, &spec.declared_default);
    Ok(spec)
}

/// Ordered collection of hyperparameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchSpace {
    params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        for (i, p) in params.iter().enumerate() {
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::DuplicateParam(p.name.clone()));
            }
            p.validate()?;
        }
        Ok(Self { params })
    }

    /// Parse the hyper-dict entry for `model_name`, preserving document order.
    pub fn parse_hyper_dict(text: &str, model_name: &str) -> Result<Self> {
        let doc: serde_json::Value = serde_json::from_str(text)?;
        let entries = doc
            .get(model_name)
            .ok_or_else(|| Error::MissingModel(model_name.to_string()))?
            .as_object()
            .ok_or_else(|| Error::malformed(model_name, "model entry must be an object"))?;
        let params = entries
            .iter()
            .map(|(name, entry)| parse_param(name, entry))
            .collect::<Result<Vec<_>>>()?;
        Self::new(params)
    }

    /// Canonical hyper-dict JSON: parameters in space order, fields sorted.
    pub fn to_hyper_dict_json(&self, model_name: &str) -> String {
        let mut model = serde_json::Map::new();
        for p in &self.params {
            let mut fields: BTreeMap<&str, serde_json::Value> = BTreeMap::new();
            fields.insert("type", json!(p.kind.as_str()));
            fields.insert("transform", json!(p.transform.as_str()));
            match p.kind {
                ParamKind::Float => {
                    fields.insert("lower", json!(p.lower));
                    fields.insert("upper", json!(p.upper));
                }
                _ => {
                    fields.insert("lower", json!(p.lower as i64));
                    fields.insert("upper", json!(p.upper as i64));
                }
            }
            fields.insert(
                "default",
                serde_json::to_value(&p.declared_default).expect("value serializes"),
            );
            if p.kind == ParamKind::Factor {
                fields.insert("levels", json!(p.levels));
            }
            if let Some(t) = &p.value_type {
                fields.insert("core_model_parameter_type", json!(t));
            }
            if let Some(c) = &p.class_name {
                fields.insert("class_name", json!(c));
            }
            let obj: serde_json::Map<String, serde_json::Value> =
                fields.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
            model.insert(p.name.clone(), serde_json::Value::Object(obj));
        }
        let mut doc = serde_json::Map::new();
        doc.insert(model_name.to_string(), serde_json::Value::Object(model));
        serde_json::to_string_pretty(&doc).expect("hyper-dict serializes")
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Indices of the non-fixed parameters.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| !self.params[i].is_fixed()).collect()
    }

    pub fn active_dims(&self) -> usize {
        self.params.iter().filter(|p| !p.is_fixed()).count()
    }

    /// Return a copy with new bounds for a numeric parameter. Equal bounds
    /// fix the parameter; the default is clamped into the new range.
    pub fn modify_bounds(&self, name: &str, bounds: [f64; 2]) -> Result<Self> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let invalid = |reason: String| Error::InvalidModification {
            name: name.to_string(),
            reason,
        };
        let mut spec = self.params[idx].clone();
        if spec.kind == ParamKind::Factor {
            return Err(invalid("factor bounds follow its levels; use modify_levels".into()));
        }
        let [lower, upper] = bounds;
        if !(lower.is_finite() && upper.is_finite()) || lower > upper {
            return Err(invalid(format!("invalid bounds [{lower}, {upper}]")));
        }
        check_integral_bounds(&spec, lower, upper).map_err(invalid)?;
        spec.lower = lower;
        spec.upper = upper;
        spec.default = clamp_default(&spec, &spec.declared_default);
        let mut out = self.clone();
        out.params[idx] = spec;
        Ok(out)
    }

    /// Return a copy with a factor restricted to `levels` (drawn from its
    /// original level list). A single level fixes the factor.
    pub fn modify_levels<S: AsRef<str>>(&self, name: &str, levels: &[S]) -> Result<Self> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let invalid = |reason: String| Error::InvalidModification {
            name: name.to_string(),
            reason,
        };
        let mut spec = self.params[idx].clone();
        if spec.kind != ParamKind::Factor {
            return Err(invalid("only factor parameters have levels".into()));
        }
        if levels.is_empty() {
            return Err(invalid("level list must not be empty".into()));
        }
        let mut new_levels: Vec<String> = Vec::with_capacity(levels.len());
        for level in levels.iter().map(AsRef::as_ref) {
            if !spec.level_universe.iter().any(|l| l == level) {
                return Err(invalid(format!("unknown level `{level}`")));
            }
            if new_levels.iter().any(|l| l == level) {
                return Err(invalid(format!("duplicate level `{level}`")));
            }
            new_levels.push(level.to_string());
        }
        spec.levels = new_levels;
        spec.upper = (spec.levels.len() - 1) as f64;
        if spec
            .declared_default
            .as_level()
            .and_then(|l| spec.level_index(l))
            .is_none()
        {
            spec.declared_default = Value::Level(spec.levels[0].clone());
        }
        spec.default = clamp_default(&spec, &spec.declared_default);
        let mut out = self.clone();
        out.params[idx] = spec;
        Ok(out)
    }

    /// Internal vector of the defaults (fixed parameters at their fixed value).
    pub fn default_internal(&self) -> Vec<f64> {
        self.params
            .iter()
            .map(|p| if p.is_fixed() { p.lower } else { p.default_internal() })
            .collect()
    }

    pub fn default_config(&self) -> Config {
        self.from_internal(&self.default_internal())
            .expect("defaults are always in bounds")
    }

    /// Encode a natural-unit configuration as a full internal vector.
    pub fn to_internal(&self, config: &Config) -> Result<Vec<f64>> {
        self.params
            .iter()
            .map(|p| {
                let v = config
                    .get(&p.name)
                    .ok_or_else(|| Error::InvalidConfig(format!("missing parameter `{}`", p.name)))?;
                p.encode(v)
            })
            .collect()
    }

    /// Decode a full internal vector. Fixed parameters always decode to their
    /// fixed value.
    pub fn from_internal(&self, x: &[f64]) -> Result<Config> {
        if x.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                actual: x.len(),
            });
        }
        let mut config = Config::new();
        for (p, &raw) in self.params.iter().zip(x) {
            let raw = if p.is_fixed() { p.lower } else { raw };
            config.insert(p.name.clone(), p.decode(raw)?);
        }
        Ok(config)
    }

    /// Snap a full internal vector onto the lattice and into bounds; fixed
    /// parameters are set to their fixed value.
    pub fn repair(&self, x: &mut [f64]) {
        for (p, v) in self.params.iter().zip(x.iter_mut()) {
            if p.is_fixed() {
                *v = p.lower;
                continue;
            }
            let mut r = v.clamp(p.lower, p.upper);
            if p.kind.is_integral() {
                r = r.round().clamp(p.lower, p.upper);
            }
            *v = r;
        }
    }

    /// Expand a vector over the active dimensions to a full internal vector.
    pub fn expand_active(&self, active: &[f64]) -> Vec<f64> {
        let mut it = active.iter();
        self.params
            .iter()
            .map(|p| {
                if p.is_fixed() {
                    p.lower
                } else {
                    *it.next().expect("active length")
                }
            })
            .collect()
    }

    pub fn project_active(&self, full: &[f64]) -> Vec<f64> {
        self.params
            .iter()
            .zip(full)
            .filter(|(p, _)| !p.is_fixed())
            .map(|(_, &v)| v)
            .collect()
    }

    /// Bounds of the active dimensions.
    pub fn active_bounds(&self) -> Vec<(f64, f64)> {
        self.params
            .iter()
            .filter(|p| !p.is_fixed())
            .map(|p| (p.lower, p.upper))
            .collect()
    }

    /// Map a unit-cube point over the active dimensions to a full internal
    /// vector. Integer axes are split into equal-width cells, one per lattice
    /// point, so stratification carries over to the lattice.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        let mut it = u.iter();
        self.params
            .iter()
            .map(|p| {
                if p.is_fixed() {
                    return p.lower;
                }
                let t = it.next().expect("unit length").clamp(0.0, 1.0);
                if p.kind.is_integral() {
                    let cells = p.upper - p.lower + 1.0;
                    (p.lower + (t * cells).floor()).min(p.upper)
                } else {
                    p.lower + t * (p.upper - p.lower)
                }
            })
            .collect()
    }

    /// Tabulate the space, optionally with tuned values and importances.
    pub fn design_table(&self, results: Option<(&[f64], &ImportanceReport)>) -> DesignTable {
        let rows = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let (tuned, importance, stars) = match results {
                    Some((x, report)) => {
                        let entry = report.get(&p.name);
                        (
                            x.get(i).copied(),
                            Some(entry.map_or(0.0, |e| e.importance)),
                            Some(entry.map_or(String::new(), |e| e.stars.to_string())),
                        )
                    }
                    None => (None, None, None),
                };
                DesignRow {
                    name: p.name.clone(),
                    kind: p.kind,
                    default: p.declared_default.to_string(),
                    lower: p.lower,
                    upper: p.upper,
                    transform: p.transform.as_str().to_string(),
                    tuned,
                    importance,
                    stars,
                }
            })
            .collect();
        DesignTable { rows }
    }
}

/// Decode a single internal value.
pub fn apply_transform(spec: &ParamSpec, raw: f64) -> Result<Value> {
    spec.decode(raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub name: String,
    pub kind: ParamKind,
    pub default: String,
    pub lower: f64,
    pub upper: f64,
    pub transform: String,
    pub tuned: Option<f64>,
    pub importance: Option<f64>,
    pub stars: Option<String>,
}

impl DesignRow {
    fn format_bound(&self, v: f64) -> String {
        if self.kind.is_integral() {
            format!("{}", v as i64)
        } else {
            format!("{v}")
        }
    }

    fn cells(&self) -> Vec<String> {
        let mut cells = vec![
            self.name.clone(),
            self.kind.as_str().to_string(),
            self.default.clone(),
            self.format_bound(self.lower),
            self.format_bound(self.upper),
        ];
        if let Some(t) = self.tuned {
            cells.push(self.format_bound(t));
        }
        cells.push(self.transform.clone());
        if let Some(imp) = self.importance {
            cells.push(format!("{imp:.2}"));
        }
        if let Some(stars) = &self.stars {
            cells.push(stars.clone());
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DesignTable {
    pub rows: Vec<DesignRow>,
}

impl DesignTable {
    pub fn header(&self) -> Vec<&'static str> {
        let with_results = self.rows.first().is_some_and(|r| r.tuned.is_some());
        if with_results {
            vec![
                "name",
                "type",
                "default",
                "lower",
                "upper",
                "tuned",
                "transform",
                "importance",
                "stars",
            ]
        } else {
            vec!["name", "type", "default", "lower", "upper", "transform"]
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory csv");
        for row in &self.rows {
            w.write_record(row.cells()).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
    }

    /// Column-aligned plain text.
    pub fn to_text(&self) -> String {
        let header: Vec<String> = self.header().iter().map(|s| s.to_string()).collect();
        let body: Vec<Vec<String>> = self.rows.iter().map(DesignRow::cells).collect();
        let mut widths: Vec<usize> = header.iter().map(String::len).collect();
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&header);
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
        out.push('\n');
        for row in &body {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}
