//! Discrete parameter spaces.
//!
//! A space is an ordered list of named dimensions, each either a stepped
//! numeric range or an ordered list of categorical labels. Continuous
//! optimizers work in the unit hypercube; every dimension with `n` values
//! splits `[0, 1)` into `n` equal cells and a grid value is represented by
//! the center of its cell.

use std::collections::HashSet;
use std::fmt;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, GridError};

/// Absolute tolerance for numeric grid membership.
pub const GRID_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ParamKind {
    #[serde(rename = "range")]
    Range { lo: f64, hi: f64, step: f64 },
    #[serde(rename = "cat")]
    Categorical { values: Vec<String> },
}

/// One value of a parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Label(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Number(v) => f.write_str(&format_number(*v)),
            ParamValue::Label(s) => f.write_str(s),
        }
    }
}

/// Formats a number with at most 9 significant digits and no trailing zeros.
pub fn format_number(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == v.trunc() && v.abs() < 1e15 {
        return format!("{}", v as i64);
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let mut s = format!("{:.*}", decimals, v);
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
    /// Application default; falls back to the middle grid value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<ParamValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl ParameterSpec {
    pub fn range(name: impl Into<String>, lo: f64, hi: f64, step: f64) -> Self {
        Self { name: name.into(), kind: ParamKind::Range { lo, hi, step }, default: None, description: None }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, values: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Categorical { values: values.into_iter().map(Into::into).collect() },
            default: None,
            description: None,
        }
    }

    pub fn with_default(mut self, value: ParamValue) -> Self {
        self.default = Some(value);
        self
    }

    /// Number of grid values.
    pub fn len(&self) -> usize {
        match &self.kind {
            ParamKind::Range { lo, hi, step } => {
                let span = (hi - lo) / step;
                (span + span.abs() * 1e-9 + 1e-9).floor() as usize + 1
            }
            ParamKind::Categorical { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid value at `index` (no bounds check beyond debug builds).
    pub fn value_at(&self, index: usize) -> ParamValue {
        debug_assert!(index < self.len());
        match &self.kind {
            ParamKind::Range { lo, step, .. } => ParamValue::Number(snap(lo + index as f64 * step)),
            ParamKind::Categorical { values } => ParamValue::Label(values[index].clone()),
        }
    }

    pub fn index_of(&self, value: &ParamValue) -> Result<usize, GridError> {
        match (&self.kind, value) {
            (ParamKind::Range { lo, step, .. }, ParamValue::Number(v)) => {
                if !v.is_finite() {
                    return Err(self.off_grid(value));
                }
                let i = ((v - lo) / step).round();
                if i < 0.0 || i >= self.len() as f64 || (lo + i * step - v).abs() > GRID_TOLERANCE {
                    return Err(self.off_grid(value));
                }
                Ok(i as usize)
            }
            (ParamKind::Categorical { values }, ParamValue::Label(l)) => {
                values.iter().position(|x| x == l).ok_or_else(|| GridError::UnknownLabel {
                    dim: self.name.clone(),
                    label: l.clone(),
                })
            }
            (ParamKind::Range { .. }, ParamValue::Label(_)) => {
                Err(GridError::KindMismatch { dim: self.name.clone(), expected: "numeric" })
            }
            (ParamKind::Categorical { .. }, ParamValue::Number(_)) => {
                Err(GridError::KindMismatch { dim: self.name.clone(), expected: "label" })
            }
        }
    }

    fn off_grid(&self, value: &ParamValue) -> GridError {
        GridError::OffGrid { dim: self.name.clone(), value: value.to_string() }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let field = format!("dims.{}", self.name);
        if self.name.is_empty() {
            return Err(ConfigError::new("dims", "dimension name must be non-empty"));
        }
        match &self.kind {
            ParamKind::Range { lo, hi, step } => {
                if !(lo.is_finite() && hi.is_finite() && step.is_finite()) {
                    return Err(ConfigError::new(field, "range bounds must be finite"));
                }
                if *step <= 0.0 {
                    return Err(ConfigError::new(field, "step must be positive"));
                }
                if lo > hi {
                    return Err(ConfigError::new(field, "lo must not exceed hi"));
                }
            }
            ParamKind::Categorical { values } => {
                if values.is_empty() {
                    return Err(ConfigError::new(field, "categorical dimension needs at least one label"));
                }
                let distinct: HashSet<_> = values.iter().collect();
                if distinct.len() != values.len() {
                    return Err(ConfigError::new(field, "categorical labels must be distinct"));
                }
            }
        }
        if let Some(d) = &self.default {
            self.index_of(d).map_err(|e| ConfigError::new(format!("{field}.default"), e.to_string()))?;
        }
        Ok(())
    }
}

fn snap(v: f64) -> f64 {
    let r = (v * 1e9).round() / 1e9;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Deserialize)]
struct RawSpace {
    dims: Vec<ParameterSpec>,
    #[serde(default)]
    notes: Option<String>,
}

/// An ordered, validated list of dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace")]
pub struct ParameterSpace {
    dims: Vec<ParameterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    notes: Option<String>,
}

impl TryFrom<RawSpace> for ParameterSpace {
    type Error = ConfigError;

    fn try_from(raw: RawSpace) -> Result<Self, Self::Error> {
        let mut space = ParameterSpace::new(raw.dims)?;
        space.notes = raw.notes;
        Ok(space)
    }
}

impl ParameterSpace {
    pub fn new(dims: Vec<ParameterSpec>) -> Result<Self, ConfigError> {
        if dims.is_empty() {
            return Err(ConfigError::new("dims", "a space needs at least one dimension"));
        }
        let mut seen = HashSet::new();
        for d in &dims {
            if !seen.insert(d.name.as_str()) {
                return Err(ConfigError::new("dims", format!("duplicate dimension name `{}`", d.name)));
            }
            d.validate()?;
        }
        Ok(Self { dims, notes: None })
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::new("space", e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("space serializes")
    }

    pub fn dims(&self) -> &[ParameterSpec] {
        &self.dims
    }

    pub fn notes(&self) -> Option<&str> {
        self.notes.as_deref()
    }

    /// Dimensionality `k`.
    pub fn k(&self) -> usize {
        self.dims.len()
    }

    pub fn dim_index(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    /// Exact number of grid points.
    pub fn cardinality(&self) -> BigUint {
        self.dims.iter().fold(BigUint::from(1u32), |acc, d| acc * BigUint::from(d.len()))
    }

    /// Cartesian product of two spaces with disjoint dimension names.
    pub fn product(&self, other: &ParameterSpace) -> Result<ParameterSpace, ConfigError> {
        let mut dims = self.dims.clone();
        dims.extend(other.dims.iter().cloned());
        ParameterSpace::new(dims)
    }

    pub fn point_from_indices(&self, indices: &[usize]) -> Result<ParameterPoint, GridError> {
        if indices.len() != self.k() {
            return Err(GridError::Arity { expected: self.k(), got: indices.len() });
        }
        let values = self
            .dims
            .iter()
            .zip(indices)
            .map(|(d, &i)| {
                if i < d.len() {
                    Ok(d.value_at(i))
                } else {
                    Err(GridError::OffGrid { dim: d.name.clone(), value: format!("index {i}") })
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(ParameterPoint { values })
    }

    pub fn indices_of(&self, point: &ParameterPoint) -> Result<Vec<usize>, GridError> {
        if point.values.len() != self.k() {
            return Err(GridError::Arity { expected: self.k(), got: point.values.len() });
        }
        self.dims.iter().zip(&point.values).map(|(d, v)| d.index_of(v)).collect()
    }

    /// Cell-center encoding: value index `j` of `n` maps to `(j + 0.5) / n`.
    pub fn encode_unit(&self, point: &ParameterPoint) -> Result<Vec<f64>, GridError> {
        Ok(self.encode_indices(&self.indices_of(point)?))
    }

    pub fn encode_indices(&self, indices: &[usize]) -> Vec<f64> {
        self.dims.iter().zip(indices).map(|(d, &j)| (j as f64 + 0.5) / d.len() as f64).collect()
    }

    /// Floor decoding of a unit vector; coordinates are clamped into `[0, 1)`.
    pub fn decode_unit(&self, unit: &[f64]) -> Result<ParameterPoint, GridError> {
        let indices = self.decode_indices(unit)?;
        self.point_from_indices(&indices)
    }

    pub fn decode_indices(&self, unit: &[f64]) -> Result<Vec<usize>, GridError> {
        if unit.len() != self.k() {
            return Err(GridError::Arity { expected: self.k(), got: unit.len() });
        }
        unit.iter()
            .zip(&self.dims)
            .enumerate()
            .map(|(i, (&c, d))| {
                if !c.is_finite() {
                    return Err(GridError::NonFinite { index: i });
                }
                let n = d.len();
                let c = c.clamp(0.0, 1.0);
                Ok(((c * n as f64).floor() as usize).min(n - 1))
            })
            .collect()
    }

    pub fn random_indices<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        self.dims.iter().map(|d| rng.random_range(0..d.len())).collect()
    }

    /// Uniform sample over the grid.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterPoint {
        let idx = self.random_indices(rng);
        self.point_from_indices(&idx).expect("sampled indices are in range")
    }

    /// The application default point: each dimension's declared default or
    /// its middle grid value.
    pub fn default_point(&self) -> ParameterPoint {
        let values = self
            .dims
            .iter()
            .map(|d| d.default.clone().unwrap_or_else(|| d.value_at(d.len() / 2)))
            .collect();
        ParameterPoint { values }
    }

    pub fn contains(&self, point: &ParameterPoint) -> bool {
        self.indices_of(point).is_ok()
    }
}

/// One value per dimension, in dimension order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterPoint {
    pub values: Vec<ParamValue>,
}

impl ParameterPoint {
    pub fn new(values: Vec<ParamValue>) -> Self {
        Self { values }
    }

    /// Named view of the point.
    pub fn named<'a>(&'a self, space: &'a ParameterSpace) -> impl Iterator<Item = (&'a str, &'a ParamValue)> {
        space.dims().iter().map(|d| d.name.as_str()).zip(self.values.iter())
    }

    pub fn get<'a>(&'a self, space: &ParameterSpace, name: &str) -> Option<&'a ParamValue> {
        space.dim_index(name).and_then(|i| self.values.get(i))
    }

    /// Builds a point from a JSON object keyed by dimension name.
    pub fn from_named_json(space: &ParameterSpace, value: &serde_json::Value) -> Result<Self, ConfigError> {
        let obj = value
            .as_object()
            .ok_or_else(|| ConfigError::new("point", "expected an object keyed by dimension name"))?;
        let mut values = Vec::with_capacity(space.k());
        for d in space.dims() {
            let v = obj
                .get(&d.name)
                .ok_or_else(|| ConfigError::new(format!("point.{}", d.name), "missing value"))?;
            let pv: ParamValue = serde_json::from_value(v.clone())
                .map_err(|e| ConfigError::new(format!("point.{}", d.name), e.to_string()))?;
            d.index_of(&pv).map_err(|e| ConfigError::new(format!("point.{}", d.name), e.to_string()))?;
            values.push(pv);
        }
        if obj.len() != space.k() {
            return Err(ConfigError::new("point", "point names a dimension the space does not have"));
        }
        Ok(Self { values })
    }

    /// Like [`from_named_json`](Self::from_named_json), but dimensions the
    /// object leaves out take the space default.
    pub fn with_defaults(space: &ParameterSpace, overrides: &serde_json::Value) -> Result<Self, ConfigError> {
        let given = overrides
            .as_object()
            .ok_or_else(|| ConfigError::new("point", "expected an object keyed by dimension name"))?;
        let mut named = space.default_point().to_named_json(space);
        let map = named.as_object_mut().expect("named point is an object");
        map.extend(given.iter().map(|(k, v)| (k.clone(), v.clone())));
        Self::from_named_json(space, &named)
    }

    pub fn to_named_json(&self, space: &ParameterSpace) -> serde_json::Value {
        let map = self
            .named(space)
            .map(|(k, v)| (k.to_string(), serde_json::to_value(v).expect("value serializes")))
            .collect();
        serde_json::Value::Object(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space(sizes: &[usize]) -> ParameterSpace {
        let dims = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| ParameterSpec::range(format!("d{i}"), 0.0, (n - 1) as f64, 1.0))
            .collect();
        ParameterSpace::new(dims).unwrap()
    }

    fn otsu() -> ParameterSpec {
        ParameterSpec::range("OTSU", 0.3, 1.3, 0.1)
    }

    #[test]
    fn decimal_step_counts() {
        assert_eq!(otsu().len(), 11);
        assert_eq!(ParameterSpec::range("CW", 0.0, 1.0, 0.05).len(), 21);
        assert_eq!(ParameterSpec::range("T", 2.5, 7.5, 0.5).len(), 11);
        assert_eq!(ParameterSpec::range("MaxSize", 50.0, 400.0, 5.0).len(), 71);
        assert_eq!(ParameterSpec::range("one", 3.0, 3.0, 1.0).len(), 1);
    }

    #[test]
    fn cardinality_product_rule() {
        assert_eq!(space(&[1]).cardinality(), BigUint::from(1u32));
        assert_eq!(space(&[2, 3, 4]).cardinality(), BigUint::from(24u32));
    }

    #[test]
    fn cardinality_is_multiplicative() {
        let a = space(&[5, 7]);
        let b = ParameterSpace::new(vec![ParameterSpec::categorical("c", ["x", "y", "z"])]).unwrap();
        assert_eq!(a.product(&b).unwrap().cardinality(), a.cardinality() * b.cardinality());
    }

    #[test]
    fn encode_cell_centers() {
        let s = ParameterSpace::new(vec![ParameterSpec::categorical("w", ["4-conn", "8-conn"])]).unwrap();
        let p0 = s.point_from_indices(&[0]).unwrap();
        let p1 = s.point_from_indices(&[1]).unwrap();
        assert_eq!(s.encode_unit(&p0).unwrap(), vec![0.25]);
        assert_eq!(s.encode_unit(&p1).unwrap(), vec![0.75]);

        let single = space(&[1]);
        assert_eq!(single.encode_unit(&single.point_from_indices(&[0]).unwrap()).unwrap(), vec![0.5]);

        let o = ParameterSpace::new(vec![otsu()]).unwrap();
        let u = o.encode_unit(&ParameterPoint::new(vec![ParamValue::Number(0.3)])).unwrap();
        assert!((u[0] - 0.5 / 11.0).abs() < 1e-15);
        assert!((u[0] - 0.04545).abs() < 1e-5);
    }

    #[test]
    fn off_grid_values_rejected() {
        let o = ParameterSpace::new(vec![otsu()]).unwrap();
        let bad = ParameterPoint::new(vec![ParamValue::Number(0.35)]);
        assert!(matches!(o.encode_unit(&bad), Err(GridError::OffGrid { .. })));
        let out = ParameterPoint::new(vec![ParamValue::Number(1.4)]);
        assert!(matches!(o.encode_unit(&out), Err(GridError::OffGrid { .. })));
        let label = ParameterPoint::new(vec![ParamValue::Label("x".into())]);
        assert!(matches!(o.encode_unit(&label), Err(GridError::KindMismatch { .. })));
        // binary-inexact decimal still lands on the grid
        let ok = ParameterPoint::new(vec![ParamValue::Number(0.1 * 7.0)]);
        assert!(o.encode_unit(&ok).is_ok());
    }

    #[test]
    fn decode_boundaries() {
        let s = space(&[2, 5]);
        assert_eq!(s.decode_indices(&[0.25, 0.0]).unwrap(), vec![0, 0]);
        assert_eq!(s.decode_indices(&[1.0, 1.0]).unwrap(), vec![1, 4]);
        assert_eq!(s.decode_indices(&[-3.0, 7.0]).unwrap(), vec![0, 4]);
        assert_eq!(s.decode_indices(&[0.5, f64::NAN]), Err(GridError::NonFinite { index: 1 }));
        assert!(s.decode_indices(&[f64::INFINITY, 0.1]).is_err());
    }

    #[test]
    fn exhaustive_round_trip_3x4x2() {
        let s = ParameterSpace::new(vec![
            ParameterSpec::range("a", 0.3, 0.5, 0.1),
            ParameterSpec::range("b", 10.0, 25.0, 5.0),
            ParameterSpec::categorical("c", ["4-conn", "8-conn"]),
        ])
        .unwrap();
        let mut count = 0;
        for i in 0..3 {
            for j in 0..4 {
                for l in 0..2 {
                    let p = s.point_from_indices(&[i, j, l]).unwrap();
                    let u = s.encode_unit(&p).unwrap();
                    assert_eq!(s.decode_unit(&u).unwrap(), p);
                    count += 1;
                }
            }
        }
        assert_eq!(count, 24);
    }

    #[test]
    fn random_point_deterministic_and_uniform() {
        let s = ParameterSpace::new(vec![
            ParameterSpec::categorical("c", ["a", "b"]),
            ParameterSpec::range("one", 5.0, 5.0, 1.0),
        ])
        .unwrap();
        let a = s.random_point(&mut ChaCha8Rng::seed_from_u64(9));
        let b = s.random_point(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mut first = 0usize;
        for _ in 0..n {
            let p = s.random_point(&mut rng);
            assert_eq!(p.values[1], ParamValue::Number(5.0));
            if p.values[0] == ParamValue::Label("a".into()) {
                first += 1;
            }
        }
        // binomial(n, 0.5): 3 sigma = 3 * sqrt(n * 0.25)
        let sigma3 = 3.0 * (n as f64 * 0.25).sqrt();
        assert!((first as f64 - n as f64 * 0.5).abs() <= sigma3, "{first}");
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(ParameterSpace::new(vec![]).is_err());
        assert!(ParameterSpace::new(vec![ParameterSpec::range("a", 0.0, 1.0, 0.0)]).is_err());
        assert!(ParameterSpace::new(vec![ParameterSpec::range("a", 2.0, 1.0, 0.5)]).is_err());
        assert!(ParameterSpace::new(vec![ParameterSpec::categorical("a", Vec::<String>::new())]).is_err());
        assert!(ParameterSpace::new(vec![ParameterSpec::categorical("a", ["x", "x"])]).is_err());
        assert!(ParameterSpace::new(vec![otsu(), otsu()]).is_err());
        let bad_default = otsu().with_default(ParamValue::Number(0.33));
        assert!(ParameterSpace::new(vec![bad_default]).is_err());
    }

    #[test]
    fn json_schema() {
        let text = r#"{"dims":[{"name":"OTSU","type":"range","lo":0.3,"hi":1.3,"step":0.1},
                               {"name":"Watershed","type":"cat","values":["4-conn","8-conn"]}]}"#;
        let s = ParameterSpace::from_json(text).unwrap();
        assert_eq!(s.k(), 2);
        assert_eq!(s.cardinality(), BigUint::from(22u32));
        let again = ParameterSpace::from_json(&s.to_json()).unwrap();
        assert_eq!(again, s);
        assert!(ParameterSpace::from_json(r#"{"dims":[]}"#).is_err());
    }

    #[test]
    fn named_points() {
        let s = ParameterSpace::new(vec![otsu(), ParameterSpec::categorical("W", ["4-conn", "8-conn"])]).unwrap();
        let p = s.point_from_indices(&[2, 1]).unwrap();
        let j = p.to_named_json(&s);
        assert_eq!(j["OTSU"], serde_json::json!(0.5));
        assert_eq!(ParameterPoint::from_named_json(&s, &j).unwrap(), p);
        assert!(ParameterPoint::from_named_json(&s, &serde_json::json!({"OTSU": 0.5})).is_err());
        let partial = ParameterPoint::with_defaults(&s, &serde_json::json!({"OTSU": 0.5})).unwrap();
        assert_eq!(partial.get(&s, "OTSU"), Some(&ParamValue::Number(0.5)));
        assert!(ParameterPoint::with_defaults(&s, &serde_json::json!({"Nope": 1})).is_err());
    }

    #[test]
    fn default_point_falls_back_to_middle() {
        let s = ParameterSpace::new(vec![otsu(), ParameterSpec::range("x", 0.0, 4.0, 1.0).with_default(ParamValue::Number(1.0))])
            .unwrap();
        let d = s.default_point();
        assert_eq!(d.values, vec![ParamValue::Number(0.8), ParamValue::Number(1.0)]);
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(5.0), "5");
        assert_eq!(format_number(0.30000000000000004), "0.3");
        assert_eq!(format_number(-0.05), "-0.05");
        assert_eq!(format_number(1.0 / 3.0), "0.333333333");
        assert_eq!(format_number(123456.789), "123456.789");
    }
}
