//! Experimental protocols: weight sweeps and Monte Carlo cross-validation.

mod scenes;

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::metrics::MetricKind;
use crate::objective::{table2_weight_sets, EvaluationResult, Weights};
use crate::optimizers::{Algorithm, OptimizerConfig};
use crate::paramspace::{format_number, ParameterPoint, ParameterSpace};
use crate::runner::{evaluate_point, ObjectiveSpec, RunError, Sample, TuningConfig, TuningJob, WorkflowSpec};

pub use scenes::{generate_dataset, generate_grouped_dataset, generate_scene, generate_with, SceneParams, SyntheticScene};

/// A weight row: the text it was given as and the normalized pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub raw: String,
    pub weights: Weights,
}

impl WeightSpec {
    /// `q,t` must sum to exactly one; `a:b` is a raw ratio that is normalized.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let weights = if let Some((a, b)) = text.split_once(':') {
            let a = crate::objective::Rational::parse(a.trim())?.to_f64();
            let b = crate::objective::Rational::parse(b.trim())?.to_f64();
            Weights::normalized(a, b)?
        } else {
            Weights::parse(text)?
        };
        Ok(Self { raw: text.to_string(), weights })
    }

    pub fn table2() -> Vec<Self> {
        ["1,0", "1/2,1/2", "2/3,1/3", "4/5,1/5"]
            .iter()
            .zip(table2_weight_sets())
            .map(|(raw, weights)| Self { raw: raw.to_string(), weights })
            .collect()
    }
}

/// Tuning settings shared by every cell of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub algorithms: Vec<Algorithm>,
    pub weights: Vec<WeightSpec>,
    pub budget: usize,
    pub repeats: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub time_cap: Option<f64>,
    #[serde(default)]
    pub metric: MetricKind,
    /// The point tuned results are compared against; the space default when unset.
    #[serde(default)]
    pub default_point: Option<ParameterPoint>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn one() -> usize {
    1
}

impl StudyConfig {
    pub fn new(algorithms: Vec<Algorithm>, budget: usize, repeats: usize, seed: u64) -> Self {
        Self {
            algorithms,
            weights: WeightSpec::table2(),
            budget,
            repeats,
            seed,
            workers: 1,
            time_cap: None,
            metric: MetricKind::ObjectDice,
            default_point: None,
            optimizer: OptimizerConfig::default(),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.algorithms.is_empty() {
            return Err(ConfigError::new("algorithms", "at least one algorithm is required"));
        }
        if self.weights.is_empty() {
            return Err(ConfigError::new("weights", "at least one weight set is required"));
        }
        if self.repeats == 0 {
            return Err(ConfigError::new("repeats", "repeats must be at least 1"));
        }
        Ok(())
    }

    fn run_seed(&self, repeat: usize) -> u64 {
        self.seed.wrapping_add(repeat as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

/// Scalar, quality and time of one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub scalar: f64,
    pub quality: f64,
    pub time_seconds: f64,
}

impl From<&EvaluationResult> for Scores {
    fn from(r: &EvaluationResult) -> Self {
        Self { scalar: r.scalar, quality: r.quality, time_seconds: r.time_seconds }
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub repeat: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<Vec<usize>>,
    pub executed: usize,
    pub best_point: ParameterPoint,
    pub default: Scores,
    pub tuned: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub algorithm: Algorithm,
    pub weights_raw: String,
    pub weights: Weights,
    pub default_quality: Stat,
    pub tuned_quality: Stat,
    pub default_time: Stat,
    pub tuned_time: Stat,
    pub default_scalar: Stat,
    pub tuned_scalar: Stat,
    /// Mean tuned quality over mean default quality.
    pub improvement: Option<f64>,
    /// Mean default time over mean tuned time; absent for quality-only weights.
    pub speedup: Option<f64>,
    pub runs: Vec<RunRecord>,
}

impl StudyRow {
    fn from_runs(group: Option<String>, algorithm: Algorithm, w: &WeightSpec, runs: Vec<RunRecord>) -> Self {
        let col = |f: &dyn Fn(&RunRecord) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
        let default_quality = col(&|r| r.default.quality);
        let tuned_quality = col(&|r| r.tuned.quality);
        let default_time = col(&|r| r.default.time_seconds);
        let tuned_time = col(&|r| r.tuned.time_seconds);
        Self {
            group,
            algorithm,
            weights_raw: w.raw.clone(),
            weights: w.weights,
            improvement: ratio(tuned_quality.mean, default_quality.mean),
            speedup: if w.weights.is_quality_only() { None } else { ratio(default_time.mean, tuned_time.mean) },
            default_scalar: col(&|r| r.default.scalar),
            tuned_scalar: col(&|r| r.tuned.scalar),
            default_quality,
            tuned_quality,
            default_time,
            tuned_time,
            runs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    WeightSweep,
    MonteCarloXval,
    GroupedXval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub kind: StudyKind,
    pub budget: usize,
    pub repeats: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table, one line per row.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        let pm = |s: Stat| format!("{:.4}±{:.4}", s.mean, s.std);
        let header = ["group", "algo", "weights", "default_q", "tuned_q", "default_t", "tuned_t", "improvement", "speedup"];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            cells.push(vec![
                r.group.clone().unwrap_or_else(|| "-".into()),
                r.algorithm.to_string(),
                format!("{} ({},{})", r.weights_raw, format_number(r.weights.quality), format_number(r.weights.time)),
                pm(r.default_quality),
                pm(r.tuned_quality),
                format!("{:.3e}", r.default_time.mean),
                format!("{:.3e}", r.tuned_time.mean),
                opt(r.improvement),
                opt(r.speedup),
            ]);
        }
        let widths: Vec<usize> =
            (0..header.len()).map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

/// Train/test partition of dataset indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `round(fraction * n)` clamped so both sides are nonempty.
pub fn train_size(n: usize, fraction: f64) -> Result<usize, ConfigError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ConfigError::new("train_fraction", "fraction must lie strictly between 0 and 1"));
    }
    if n < 2 {
        return Err(ConfigError::new("dataset", "need at least two images to split"));
    }
    Ok(((fraction * n as f64).round() as usize).clamp(1, n - 1))
}

/// Seeded random splits; the sequence depends only on `(n, fraction, repeats, seed)`.
pub fn monte_carlo_splits(n: usize, fraction: f64, repeats: usize, seed: u64) -> Result<Vec<Split>, ConfigError> {
    let k = train_size(n, fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..repeats)
        .map(|_| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let mut train = idx[..k].to_vec();
            let mut test = idx[k..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            Split { train, test }
        })
        .collect())
}

fn pick(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

struct Cell<'a> {
    space: &'a Arc<ParameterSpace>,
    workflow: &'a WorkflowSpec,
    cfg: &'a StudyConfig,
    algorithm: Algorithm,
    weights: Weights,
    seed: u64,
}

impl Cell<'_> {
    fn tune(&self, train: Vec<Sample>) -> Result<crate::runner::TuningOutcome, RunError> {
        TuningJob {
            space: self.space.clone(),
            workflow: self.workflow.clone(),
            samples: train,
            objective: ObjectiveSpec { weights: self.weights, time_cap: self.cfg.time_cap, metric: self.cfg.metric },
            config: TuningConfig {
                workers: self.cfg.workers,
                optimizer: self.cfg.optimizer.clone(),
                ..TuningConfig::new(self.algorithm, self.cfg.budget, self.seed)
            },
            default_point: self.cfg.default_point.clone(),
        }
        .run()
    }
}

/// Tunes on the whole dataset for every algorithm, weight row and repeat and
/// compares against the default point on the same data.
pub fn weight_sweep(
    space: Arc<ParameterSpace>,
    workflow: &WorkflowSpec,
    dataset: &[Sample],
    cfg: &StudyConfig,
) -> Result<StudyReport, RunError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(ConfigError::new("dataset", "dataset is empty").into());
    }
    let mut rows = Vec::new();
    for &algorithm in &cfg.algorithms {
        for w in &cfg.weights {
            let mut runs = Vec::new();
            for repeat in 0..cfg.repeats {
                let seed = cfg.run_seed(repeat);
                let cell = Cell { space: &space, workflow, cfg, algorithm, weights: w.weights, seed };
                let out = cell.tune(dataset.to_vec())?;
                let default = out.default.as_ref().expect("jobs always run the default point");
                runs.push(RunRecord {
                    repeat,
                    seed,
                    train: None,
                    test: None,
                    executed: out.executed,
                    best_point: out.best_point.clone(),
                    default: default.into(),
                    tuned: (&out.best).into(),
                });
            }
            rows.push(StudyRow::from_runs(None, algorithm, w, runs));
        }
    }
    Ok(StudyReport { kind: StudyKind::WeightSweep, budget: cfg.budget, repeats: cfg.repeats, seed: cfg.seed, train_fraction: None, rows })
}

fn xval_rows(
    space: &Arc<ParameterSpace>,
    workflow: &WorkflowSpec,
    dataset: &[Sample],
    fraction: f64,
    cfg: &StudyConfig,
    group: Option<String>,
) -> Result<Vec<StudyRow>, RunError> {
    let splits = monte_carlo_splits(dataset.len(), fraction, cfg.repeats, cfg.seed)?;
    let mut rows = Vec::new();
    for &algorithm in &cfg.algorithms {
        for w in &cfg.weights {
            let mut runs = Vec::new();
            for (repeat, split) in splits.iter().enumerate() {
                let seed = cfg.run_seed(repeat);
                let cell = Cell { space, workflow, cfg, algorithm, weights: w.weights, seed };
                let out = cell.tune(pick(dataset, &split.train))?;
                let test = pick(dataset, &split.test);
                let objective = ObjectiveSpec { weights: w.weights, time_cap: out.time_cap, metric: cfg.metric }.resolve(None)?;
                let default_point = out.default.as_ref().expect("jobs always run the default point").point.clone();
                let default = evaluate_point(space, &default_point, workflow, &test, &objective);
                let tuned = evaluate_point(space, &out.best_point, workflow, &test, &objective);
                runs.push(RunRecord {
                    repeat,
                    seed,
                    train: Some(split.train.clone()),
                    test: Some(split.test.clone()),
                    executed: out.executed,
                    best_point: out.best_point.clone(),
                    default: (&default).into(),
                    tuned: (&tuned).into(),
                });
            }
            rows.push(StudyRow::from_runs(group.clone(), algorithm, w, runs));
        }
    }
    Ok(rows)
}

/// Tunes on a random `train_fraction` of the images and scores tuned and
/// default points on the rest, once per repeat.
pub fn monte_carlo_xval(
    space: Arc<ParameterSpace>,
    workflow: &WorkflowSpec,
    dataset: &[Sample],
    train_fraction: f64,
    cfg: &StudyConfig,
) -> Result<StudyReport, RunError> {
    cfg.validate()?;
    let rows = xval_rows(&space, workflow, dataset, train_fraction, cfg, None)?;
    Ok(StudyReport {
        kind: StudyKind::MonteCarloXval,
        budget: cfg.budget,
        repeats: cfg.repeats,
        seed: cfg.seed,
        train_fraction: Some(train_fraction),
        rows,
    })
}

/// Runs [`monte_carlo_xval`] separately inside each labeled group.
pub fn grouped_xval(
    space: Arc<ParameterSpace>,
    workflow: &WorkflowSpec,
    groups: &[(String, Vec<Sample>)],
    train_fraction: f64,
    cfg: &StudyConfig,
) -> Result<StudyReport, RunError> {
    cfg.validate()?;
    if groups.is_empty() {
        return Err(ConfigError::new("groups", "at least one group is required").into());
    }
    let mut rows = Vec::new();
    for (name, samples) in groups {
        rows.extend(xval_rows(&space, workflow, samples, train_fraction, cfg, Some(name.clone()))?);
    }
    Ok(StudyReport {
        kind: StudyKind::GroupedXval,
        budget: cfg.budget,
        repeats: cfg.repeats,
        seed: cfg.seed,
        train_fraction: Some(train_fraction),
        rows,
    })
}

/// Groups scenes by their label, in first-appearance order.
pub fn group_scenes(scenes: &[SyntheticScene]) -> Vec<(String, Vec<Sample>)> {
    let mut groups: Vec<(String, Vec<Sample>)> = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        let name = s.group.clone().unwrap_or_else(|| "all".into());
        let sample = s.to_sample(format!("scene_{i:03}"));
        match groups.iter_mut().find(|(g, _)| *g == name) {
            Some((_, v)) => v.push(sample),
            None => groups.push((name, vec![sample])),
        }
    }
    groups
}
