//! Tuning request schema shared by `POST /tasks` and the `tune` subcommand.

use std::path::PathBuf;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use segtune_core::error::ConfigError;
use segtune_core::metrics::MetricKind;
use segtune_core::objective::Weights;
use segtune_core::optimizers::{Algorithm, OptimizerConfig};
use segtune_core::paramspace::{ParameterPoint, ParameterSpace};
use segtune_core::runner::{ObjectiveSpec, RunError, Sample, TuningConfig, TuningJob, WorkflowSpec};

/// A space given inline or as a server-local path to a space file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceSource {
    Path(PathBuf),
    Inline(ParameterSpace),
}

impl SpaceSource {
    fn load(&self) -> Result<ParameterSpace, RequestError> {
        match self {
            Self::Inline(s) => Ok(s.clone()),
            Self::Path(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    RequestError::Unreadable(vec![ConfigError::new("space", format!("{}: {e}", p.display()))])
                })?;
                ParameterSpace::from_json(&text).map_err(|e| RequestError::Invalid(vec![e]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRequest {
    pub space: SpaceSource,
    pub workflow: WorkflowSpec,
    pub inputs: Vec<PathBuf>,
    pub truths: Vec<PathBuf>,
    pub weights: Weights,
    #[serde(default)]
    pub time_cap: Option<f64>,
    #[serde(default)]
    pub metric: MetricKind,
    pub algorithm: Algorithm,
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    /// Evaluation workers; the service default when unset.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub target: Option<f64>,
    /// Named baseline values, e.g. `{"Blur": 3, "Threshold": 200}`; unnamed
    /// dimensions keep the space default.
    #[serde(default)]
    pub default_point: Option<Value>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RequestError {
    #[error("invalid request: {}", join(.0))]
    Invalid(Vec<ConfigError>),
    #[error("unreadable input: {}", join(.0))]
    Unreadable(Vec<ConfigError>),
}

impl RequestError {
    pub fn fields(&self) -> &[ConfigError] {
        match self {
            Self::Invalid(v) | Self::Unreadable(v) => v,
        }
    }
}

fn join(errors: &[ConfigError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

const FIELDS: [&str; 14] = [
    "space",
    "workflow",
    "inputs",
    "truths",
    "weights",
    "time_cap",
    "metric",
    "algorithm",
    "budget",
    "seed",
    "workers",
    "target",
    "default_point",
    "optimizer",
];

fn take<T: DeserializeOwned>(obj: &mut Map<String, Value>, name: &str, errors: &mut Vec<ConfigError>) -> Option<T> {
    let v = obj.remove(name)?;
    serde_json::from_value(v).map_err(|e| errors.push(ConfigError::new(name, e.to_string()))).ok()
}

fn required<T>(v: Option<T>, name: &str, present: bool, errors: &mut Vec<ConfigError>) -> Option<T> {
    if v.is_none() && !present {
        errors.push(ConfigError::new(name, "field is required"));
    }
    v
}

/// Accepts `"q,t"` (fractions allowed, exact sum check), `[q, t]` or
/// `{"quality": q, "time": t}`.
fn parse_weights(v: Value) -> Result<Weights, ConfigError> {
    match v {
        Value::String(s) => Weights::parse(&s),
        Value::Array(a) if a.len() == 2 => match (a[0].as_f64(), a[1].as_f64()) {
            (Some(q), Some(t)) => Weights::new(q, t),
            _ => Err(ConfigError::new("weights", "weights must be two numbers")),
        },
        other => {
            let w: Weights = serde_json::from_value(other).map_err(|e| ConfigError::new("weights", e.to_string()))?;
            w.validate()?;
            Ok(w)
        }
    }
}

impl TuneRequest {
    /// Parses a request body, reporting every bad field rather than the first.
    pub fn from_json(value: Value) -> Result<Self, RequestError> {
        let Value::Object(mut obj) = value else {
            return Err(RequestError::Invalid(vec![ConfigError::new("body", "request must be a JSON object")]));
        };
        let mut errors: Vec<ConfigError> = obj
            .keys()
            .filter(|k| !FIELDS.contains(&k.as_str()))
            .map(|k| ConfigError::new(k.clone(), "unknown field"))
            .collect();
        let has = |obj: &Map<String, Value>, k: &str| obj.contains_key(k);
        let space_present = has(&obj, "space");
        let space = match obj.remove("space") {
            Some(Value::String(p)) => Some(SpaceSource::Path(p.into())),
            Some(v) => serde_json::from_value::<ParameterSpace>(v)
                .map(SpaceSource::Inline)
                .map_err(|e| errors.push(ConfigError::new("space", e.to_string())))
                .ok(),
            None => None,
        };
        let weights_present = has(&obj, "weights");
        let weights = obj.remove("weights").and_then(|v| parse_weights(v).map_err(|e| errors.push(e)).ok());
        let flags: Vec<bool> = ["workflow", "inputs", "truths", "algorithm", "budget"].iter().map(|k| has(&obj, k)).collect();
        let workflow = take(&mut obj, "workflow", &mut errors);
        let inputs = take(&mut obj, "inputs", &mut errors);
        let truths = take(&mut obj, "truths", &mut errors);
        let algorithm = take(&mut obj, "algorithm", &mut errors);
        let budget = take(&mut obj, "budget", &mut errors);
        let time_cap = take(&mut obj, "time_cap", &mut errors);
        let metric = take(&mut obj, "metric", &mut errors).unwrap_or_default();
        let seed = take(&mut obj, "seed", &mut errors).unwrap_or_default();
        let workers = take(&mut obj, "workers", &mut errors);
        let target = take(&mut obj, "target", &mut errors);
        let default_point = obj.remove("default_point");
        let optimizer = take(&mut obj, "optimizer", &mut errors).unwrap_or_default();

        let space = required(space, "space", space_present, &mut errors);
        let weights = required(weights, "weights", weights_present, &mut errors);
        let workflow = required(workflow, "workflow", flags[0], &mut errors);
        let inputs = required(inputs, "inputs", flags[1], &mut errors);
        let truths = required(truths, "truths", flags[2], &mut errors);
        let algorithm = required(algorithm, "algorithm", flags[3], &mut errors);
        let budget = required(budget, "budget", flags[4], &mut errors);
        match (space, workflow, inputs, truths, weights, algorithm, budget) {
            (Some(space), Some(workflow), Some(inputs), Some(truths), Some(weights), Some(algorithm), Some(budget))
                if errors.is_empty() =>
            {
                Ok(Self {
                    space,
                    workflow,
                    inputs,
                    truths,
                    weights,
                    time_cap,
                    metric,
                    algorithm,
                    budget,
                    seed,
                    workers,
                    target,
                    default_point,
                    optimizer,
                })
            }
            _ => Err(RequestError::Invalid(errors)),
        }
    }

    /// Validates every setting, then reads the reference masks.
    ///
    /// Configuration problems are [`RequestError::Invalid`]; missing or
    /// undecodable files are [`RequestError::Unreadable`].
    pub fn prepare(&self, default_workers: usize) -> Result<TuningJob, RequestError> {
        let space = Arc::new(self.space.load()?);
        let mut errors = Vec::new();
        let config = TuningConfig {
            algorithm: self.algorithm,
            budget: self.budget,
            seed: self.seed,
            workers: self.workers.unwrap_or(default_workers),
            target: self.target,
            optimizer: self.optimizer.clone(),
        };
        let objective = ObjectiveSpec { weights: self.weights, time_cap: self.time_cap, metric: self.metric };
        errors.extend(config.validate().err());
        errors.extend(objective.validate().err());
        errors.extend(self.workflow.validate(&space).err());
        if self.inputs.is_empty() {
            errors.push(ConfigError::new("inputs", "at least one input image is required"));
        }
        if self.inputs.len() != self.truths.len() {
            errors.push(ConfigError::new(
                "truths",
                format!("{} inputs but {} reference masks", self.inputs.len(), self.truths.len()),
            ));
        }
        let default_point = match &self.default_point {
            Some(v) => ParameterPoint::with_defaults(&space, v)
                .map_err(|e| errors.push(ConfigError::new("default_point", e.message)))
                .ok(),
            None => None,
        };
        if !errors.is_empty() {
            return Err(RequestError::Invalid(errors));
        }
        let mut samples = Vec::with_capacity(self.inputs.len());
        let mut unreadable = Vec::new();
        for (i, (image, truth)) in self.inputs.iter().zip(&self.truths).enumerate() {
            match Sample::from_paths(image, truth) {
                Ok(s) => samples.push(s),
                Err(RunError::Input { path, message }) => {
                    unreadable.push(ConfigError::new(format!("inputs[{i}]"), format!("{}: {message}", path.display())))
                }
                Err(RunError::Config(e)) => unreadable.push(e),
            }
        }
        if !unreadable.is_empty() {
            return Err(RequestError::Unreadable(unreadable));
        }
        Ok(TuningJob { space, workflow: self.workflow.clone(), samples, objective, config, default_point })
    }
}
