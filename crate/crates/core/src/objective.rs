//! Linear scalarization of segmentation quality and execution time.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, MeasurementError};
use crate::metrics::MetricKind;
use crate::paramspace::ParameterPoint;

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Objective weights, quality first and time second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub quality: f64,
    pub time: f64,
}

impl Weights {
    pub fn new(quality: f64, time: f64) -> Result<Self, ConfigError> {
        let w = Self { quality, time };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.quality.is_finite() && self.time.is_finite()) || self.quality < 0.0 || self.time < 0.0 {
            return Err(ConfigError::new("weights", "weights must be finite and nonnegative"));
        }
        let sum = self.quality + self.time;
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(ConfigError::new("weights", format!("weights must sum to 1 (got {sum})")));
        }
        Ok(())
    }

    /// Scales an arbitrary nonnegative pair (e.g. `2:1`) to sum to one.
    pub fn normalized(quality: f64, time: f64) -> Result<Self, ConfigError> {
        let sum = quality + time;
        if !(quality >= 0.0 && time >= 0.0 && sum > 0.0 && sum.is_finite()) {
            return Err(ConfigError::new("weights", "raw weights must be nonnegative with a positive sum"));
        }
        Self::new(quality / sum, time / sum)
    }

    /// Parses `q,t` where each side is a decimal or a fraction such as `2/3`.
    /// The sum is checked exactly on the rational values.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let (q, t) = parse_rational_pair(text)?;
        let sum = q.plus(t);
        if sum != Rational::ONE {
            return Err(ConfigError::new("weights", format!("weights `{text}` must sum to exactly 1")));
        }
        Self::new(q.to_f64(), t.to_f64())
    }

    pub fn is_quality_only(&self) -> bool {
        self.time == 0.0
    }
}

/// Parses `a,b` into two exact nonnegative rationals.
pub fn parse_rational_pair(text: &str) -> Result<(Rational, Rational), ConfigError> {
    let mut parts = text.split(',');
    let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(ConfigError::new("weights", format!("expected `quality,time`, got `{text}`")));
    };
    Ok((Rational::parse(a.trim())?, Rational::parse(b.trim())?))
}

/// Small exact nonnegative rational used for weight parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    num: u128,
    den: u128,
}

impl Rational {
    pub const ONE: Rational = Rational { num: 1, den: 1 };

    fn reduced(num: u128, den: u128) -> Self {
        fn gcd(a: u128, b: u128) -> u128 {
            if b == 0 {
                a
            } else {
                gcd(b, a % b)
            }
        }
        let g = gcd(num, den).max(1);
        Self { num: num / g, den: den / g }
    }

    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError::new("weights", format!("`{s}` is not a nonnegative decimal or fraction"));
        if let Some((n, d)) = s.split_once('/') {
            let n = Self::parse_decimal(n.trim()).ok_or_else(bad)?;
            let d = Self::parse_decimal(d.trim()).ok_or_else(bad)?;
            if d.num == 0 {
                return Err(ConfigError::new("weights", format!("`{s}` divides by zero")));
            }
            Ok(Self::reduced(n.num * d.den, n.den * d.num))
        } else {
            Self::parse_decimal(s).ok_or_else(bad)
        }
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if (int.is_empty() && frac.is_empty()) || frac.len() > 18 {
            return None;
        }
        if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return None;
        }
        let digits = format!("{int}{frac}");
        let num: u128 = digits.parse().ok()?;
        Some(Self::reduced(num, 10u128.pow(frac.len() as u32)))
    }

    pub fn plus(self, o: Self) -> Self {
        Self::reduced(self.num * o.den + o.num * self.den, self.den * o.den)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// `clamp(1 - t / time_cap, 0, 1)`; higher is faster.
pub fn time_score(t: f64, time_cap: f64) -> Result<f64, MeasurementError> {
    if !t.is_finite() || t < 0.0 {
        return Err(MeasurementError(format!("execution time {t} must be finite and nonnegative")));
    }
    if time_cap.is_nan() || time_cap <= 0.0 {
        return Err(MeasurementError(format!("time cap {time_cap} must be positive")));
    }
    Ok((1.0 - t / time_cap).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    weights: Weights,
    time_cap: f64,
    quality_metric: MetricKind,
}

impl ObjectiveConfig {
    pub fn new(weights: Weights, time_cap: f64, quality_metric: MetricKind) -> Result<Self, ConfigError> {
        weights.validate()?;
        if !(time_cap > 0.0 && time_cap.is_finite()) {
            return Err(ConfigError::new("time_cap", "time cap must be positive"));
        }
        Ok(Self { weights, time_cap, quality_metric })
    }

    pub fn weights(&self) -> Weights {
        self.weights
    }

    pub fn time_cap(&self) -> f64 {
        self.time_cap
    }

    pub fn quality_metric(&self) -> MetricKind {
        self.quality_metric
    }

    /// `w_q * quality + w_t * time_score`.
    pub fn scalarize(&self, quality: f64, time_score: f64) -> f64 {
        scalarize(&self.weights, quality, time_score)
    }

    /// Builds the full evaluation record for a measured run.
    pub fn evaluate(
        &self,
        point: ParameterPoint,
        quality: f64,
        time_seconds: f64,
        time_source: TimeSource,
    ) -> Result<EvaluationResult, MeasurementError> {
        let ts = time_score(time_seconds, self.time_cap)?;
        Ok(EvaluationResult {
            point,
            quality,
            time_seconds,
            time_source,
            time_score: ts,
            scalar: self.scalarize(quality, ts),
            error: None,
        })
    }

    /// Record for a failed run: both objectives at their floor.
    pub fn failed(&self, point: ParameterPoint, time_seconds: f64, time_source: TimeSource, error: String) -> EvaluationResult {
        EvaluationResult {
            point,
            quality: 0.0,
            time_seconds: time_seconds.max(0.0),
            time_source,
            time_score: 0.0,
            scalar: 0.0,
            error: Some(error),
        }
    }
}

pub fn scalarize(weights: &Weights, quality: f64, time_score: f64) -> f64 {
    weights.quality * quality + weights.time * time_score
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeSource {
    Measured,
    AdapterReported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub point: ParameterPoint,
    pub quality: f64,
    pub time_seconds: f64,
    pub time_source: TimeSource,
    pub time_score: f64,
    pub scalar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The four weight pairs of the multi-objective sweep: `(1,0)`, `(1/2,1/2)`,
/// `(2/3,1/3)` and `(4/5,1/5)`.
pub fn table2_weight_sets() -> Vec<Weights> {
    vec![
        Weights { quality: 1.0, time: 0.0 },
        Weights { quality: 1.0 / 2.0, time: 1.0 / 2.0 },
        Weights { quality: 2.0 / 3.0, time: 1.0 / 3.0 },
        Weights { quality: 4.0 / 5.0, time: 1.0 / 5.0 },
    ]
}

/// Index of the first maximum.
pub fn argmax_first<I: IntoIterator<Item = f64>>(values: I) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_score_formula() {
        assert_eq!(time_score(0.0, 10.0).unwrap(), 1.0);
        assert_eq!(time_score(10.0, 10.0).unwrap(), 0.0);
        assert_eq!(time_score(5.0, 10.0).unwrap(), 0.5);
        assert_eq!(time_score(25.0, 10.0).unwrap(), 0.0);
        assert!(time_score(-1.0, 10.0).is_err());
        assert!(time_score(f64::NAN, 10.0).is_err());
        assert!(time_score(1.0, 0.0).is_err());
    }

    #[test]
    fn scalarize_examples() {
        let w = Weights::new(1.0, 0.0).unwrap();
        assert_eq!(scalarize(&w, 0.65, 0.1), 0.65);
        let w = Weights::new(0.5, 0.5).unwrap();
        assert!((scalarize(&w, 0.8, 0.4) - 0.6).abs() < 1e-15);
        let w = Weights::parse("2/3,1/3").unwrap();
        assert!((scalarize(&w, 0.9, 0.3) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn weight_validation() {
        assert!(Weights::new(0.6, 0.6).is_err());
        assert!(Weights::new(1.2, -0.2).is_err());
        assert!(Weights::new(0.667, 0.333).is_ok());
        assert!(ObjectiveConfig::new(Weights::new(1.0, 0.0).unwrap(), 0.0, MetricKind::ObjectDice).is_err());
    }

    #[test]
    fn rational_parsing() {
        assert_eq!(Weights::parse("2/3,1/3").unwrap().quality, 2.0 / 3.0);
        assert_eq!(Weights::parse("4/5, 1/5").unwrap().time, 1.0 / 5.0);
        assert_eq!(Weights::parse("0.667,0.333").unwrap().quality, 0.667);
        assert_eq!(Weights::parse("1,0").unwrap(), Weights { quality: 1.0, time: 0.0 });
        assert!(Weights::parse("0.6,0.6").is_err());
        assert!(Weights::parse("2/3,0.333").is_err());
        assert!(Weights::parse("1/0,0").is_err());
        assert!(Weights::parse("-1,2").is_err());
        assert!(Weights::parse("1").is_err());
        assert!(Weights::parse("a,b").is_err());
    }

    #[test]
    fn normalizing_raw_pairs() {
        let w = Weights::normalized(2.0, 1.0).unwrap();
        assert!((w.quality - 2.0 / 3.0).abs() < 1e-15);
        assert!(Weights::normalized(0.0, 0.0).is_err());
    }

    #[test]
    fn table2_sets() {
        let sets = table2_weight_sets();
        assert_eq!(sets.len(), 4);
        assert_eq!(sets[0], Weights { quality: 1.0, time: 0.0 });
        for w in &sets {
            assert!(w.validate().is_ok());
        }
    }

    #[test]
    fn argmax_takes_first() {
        assert_eq!(argmax_first([0.1, 0.5, 0.5, 0.2]), Some(1));
        assert_eq!(argmax_first(std::iter::empty()), None);
    }
}
