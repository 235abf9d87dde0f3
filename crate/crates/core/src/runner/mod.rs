//! Workflow execution and the ask/evaluate/tell tuning loop.

mod synthetic;
mod template;

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ConfigError, EvaluationError};
use crate::exec::WorkerPool;
use crate::maskdata::LabelMask;
use crate::metrics::{mask_metric, MetricKind};
use crate::objective::{argmax_first, EvaluationResult, ObjectiveConfig, TimeSource, Weights};
use crate::optimizers::{Algorithm, OptimizerConfig, OptimizerState, Outcome};
use crate::paramspace::{ParameterPoint, ParameterSpace};

pub use synthetic::{synthetic_segment, synthetic_space, SegmenterParams, COST_PER_PIXEL_PASS, DIM_NAMES};
pub use template::CommandTemplate;

pub const DEFAULT_TIMEOUT_SECONDS: f64 = 600.0;
const STDERR_EXCERPT: usize = 2000;
const POLL_INTERVAL: Duration = Duration::from_millis(2);
const STDERR_GRACE: Duration = Duration::from_millis(500);

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECONDS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WorkflowSpec {
    #[serde(alias = "external")]
    ExternalCommand {
        command: String,
        #[serde(default = "default_timeout")]
        timeout: f64,
    },
    Synthetic,
}

impl WorkflowSpec {
    pub fn external(command: impl Into<String>) -> Self {
        Self::ExternalCommand { command: command.into(), timeout: DEFAULT_TIMEOUT_SECONDS }
    }

    pub fn validate(&self, space: &ParameterSpace) -> Result<(), ConfigError> {
        match self {
            Self::ExternalCommand { command, timeout } => {
                if !(*timeout > 0.0 && timeout.is_finite()) {
                    return Err(ConfigError::new("workflow.timeout", "timeout must be positive"));
                }
                CommandTemplate::parse(command)?.validate(space)
            }
            Self::Synthetic => {
                for name in DIM_NAMES {
                    if space.dim_index(name).is_none() {
                        return Err(ConfigError::new("space", format!("synthetic workflow needs a `{name}` dimension")));
                    }
                }
                SegmenterParams::from_point(space, &space.default_point())
                    .map(|_| ())
                    .map_err(|e| ConfigError::new("space", e.to_string()))
            }
        }
    }

    pub fn time_source(&self) -> TimeSource {
        match self {
            Self::ExternalCommand { .. } => TimeSource::Measured,
            Self::Synthetic => TimeSource::AdapterReported,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    Path(PathBuf),
    Pixels(LabelMask),
}

/// One input image with its reference mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: ImageSource,
    pub truth: LabelMask,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unreadable input {path}: {message}")]
    Input { path: PathBuf, message: String },
}

impl Sample {
    pub fn in_memory(name: impl Into<String>, image: LabelMask, truth: LabelMask) -> Self {
        Self { name: name.into(), image: ImageSource::Pixels(image), truth }
    }

    /// Reads the reference mask now; the image stays on disk until needed.
    pub fn from_paths(image: impl AsRef<Path>, truth: impl AsRef<Path>) -> Result<Self, RunError> {
        let (image, truth) = (image.as_ref(), truth.as_ref());
        if !image.is_file() {
            return Err(RunError::Input { path: image.into(), message: "not a readable file".into() });
        }
        let truth_mask = LabelMask::load(truth).map_err(|e| RunError::Input { path: truth.into(), message: e.to_string() })?;
        Ok(Self { name: image.display().to_string(), image: ImageSource::Path(image.into()), truth: truth_mask })
    }

    /// Loads on-disk images as PGM; the synthetic workflow needs pixels.
    pub fn load_pixels(&mut self) -> Result<&LabelMask, RunError> {
        if let ImageSource::Path(p) = &self.image {
            let m = LabelMask::load(p).map_err(|e| RunError::Input { path: p.clone(), message: e.to_string() })?;
            self.image = ImageSource::Pixels(m);
        }
        match &self.image {
            ImageSource::Pixels(m) => Ok(m),
            ImageSource::Path(_) => unreachable!(),
        }
    }
}

/// Quality and total time of one point over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub quality: f64,
    pub time_seconds: f64,
}

fn excerpt(bytes: &[u8]) -> String {
    let text = String::from_utf8_lossy(bytes);
    let text = text.trim();
    let start = text.len().saturating_sub(STDERR_EXCERPT);
    let start = (start..=text.len()).find(|&i| text.is_char_boundary(i)).unwrap_or(text.len());
    text[start..].to_string()
}

/// Runs `argv` without a shell, killing it after `timeout` seconds.
fn run_command(argv: &[String], timeout: f64) -> Result<(), EvaluationError> {
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..]).stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::piped());
    #[cfg(unix)]
    std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
    let mut child = cmd.spawn().map_err(|e| EvaluationError::Spawn(format!("{}: {e}", argv[0])))?;
    let mut stderr = child.stderr.take().expect("stderr is piped");
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        let _ = tx.send(buf);
    });
    let deadline = Instant::now() + Duration::from_secs_f64(timeout);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if Instant::now() >= deadline => {
                kill_tree(&mut child);
                break None;
            }
            Ok(None) => std::thread::sleep(POLL_INTERVAL),
            Err(e) => return Err(EvaluationError::Spawn(e.to_string())),
        }
    };
    // Descendants may still hold the pipe open; do not wait on them forever.
    let err_text = excerpt(&rx.recv_timeout(STDERR_GRACE).unwrap_or_default());
    match status {
        None => Err(EvaluationError::Timeout { seconds: timeout, stderr: err_text }),
        Some(s) if !s.success() => Err(EvaluationError::ExitStatus { status: s.to_string(), stderr: err_text }),
        Some(_) => Ok(()),
    }
}

/// Kills the child's whole process group.
fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    if let Ok(pgid) = i32::try_from(child.id()) {
        // SAFETY: plain syscall on the group created for this child.
        unsafe {
            libc::killpg(pgid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
    let _ = child.wait();
}

fn quality_of(computed: &LabelMask, truth: &LabelMask, metric: MetricKind) -> Result<f64, EvaluationError> {
    mask_metric(computed, truth, metric).map_err(|e| EvaluationError::Metric(e.to_string()))
}

fn measure_external(
    space: &ParameterSpace,
    point: &ParameterPoint,
    command: &str,
    timeout: f64,
    samples: &[Sample],
    metric: MetricKind,
) -> (Result<f64, EvaluationError>, f64) {
    let template = match CommandTemplate::parse(command) {
        Ok(t) => t,
        Err(e) => return (Err(EvaluationError::Parameters(e.to_string())), 0.0),
    };
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return (Err(EvaluationError::Output(format!("temporary directory: {e}"))), 0.0),
    };
    let mut total_time = 0.0;
    let mut sum = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let input = match &s.image {
            ImageSource::Path(p) => p.clone(),
            ImageSource::Pixels(m) => {
                let p = dir.path().join(format!("input_{i}.pgm"));
                if let Err(e) = m.save(&p) {
                    return (Err(EvaluationError::Output(format!("staging input: {e}"))), total_time);
                }
                p
            }
        };
        let output = dir.path().join(format!("output_{i}.pgm"));
        let argv = template.render(space, point, &input.to_string_lossy(), &output.to_string_lossy());
        let started = Instant::now();
        let run = run_command(&argv, timeout);
        total_time += started.elapsed().as_secs_f64();
        if let Err(e) = run {
            return (Err(e), total_time);
        }
        let computed = match LabelMask::load(&output) {
            Ok(m) => m,
            Err(e) => return (Err(EvaluationError::Output(format!("{}: {e}", output.display()))), total_time),
        };
        match quality_of(&computed, &s.truth, metric) {
            Ok(q) => sum += q,
            Err(e) => return (Err(e), total_time),
        }
    }
    (Ok(sum / samples.len() as f64), total_time)
}

fn measure_synthetic(
    space: &ParameterSpace,
    point: &ParameterPoint,
    samples: &[Sample],
    metric: MetricKind,
) -> (Result<f64, EvaluationError>, f64) {
    let params = match SegmenterParams::from_point(space, point) {
        Ok(p) => p,
        Err(e) => return (Err(e), 0.0),
    };
    let mut total_time = 0.0;
    let mut sum = 0.0;
    for s in samples {
        let image = match &s.image {
            ImageSource::Pixels(m) => std::borrow::Cow::Borrowed(m),
            ImageSource::Path(p) => match LabelMask::load(p) {
                Ok(m) => std::borrow::Cow::Owned(m),
                Err(e) => return (Err(EvaluationError::Output(format!("{}: {e}", p.display()))), total_time),
            },
        };
        total_time += params.cost_seconds(image.width() * image.height());
        let computed = synthetic_segment(&image, &params);
        match quality_of(&computed, &s.truth, metric) {
            Ok(q) => sum += q,
            Err(e) => return (Err(e), total_time),
        }
    }
    (Ok(sum / samples.len() as f64), total_time)
}

/// Runs the workflow on every sample and returns the dataset quality and the
/// summed time, or the first failure with the time spent so far.
pub fn measure(
    space: &ParameterSpace,
    point: &ParameterPoint,
    workflow: &WorkflowSpec,
    samples: &[Sample],
    metric: MetricKind,
) -> (Result<f64, EvaluationError>, f64) {
    if samples.is_empty() {
        return (Err(EvaluationError::Parameters("no input samples".into())), 0.0);
    }
    match workflow {
        WorkflowSpec::ExternalCommand { command, timeout } => measure_external(space, point, command, *timeout, samples, metric),
        WorkflowSpec::Synthetic => measure_synthetic(space, point, samples, metric),
    }
}

/// Evaluates one point; failures become a zero-scalar record.
pub fn evaluate_point(
    space: &ParameterSpace,
    point: &ParameterPoint,
    workflow: &WorkflowSpec,
    samples: &[Sample],
    objective: &ObjectiveConfig,
) -> EvaluationResult {
    let source = workflow.time_source();
    let (quality, time) = measure(space, point, workflow, samples, objective.quality_metric());
    match quality.map(|q| objective.evaluate(point.clone(), q, time, source)) {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => objective.failed(point.clone(), time, source, e.to_string()),
        Err(e) => {
            log::debug!("evaluation failed: {e}");
            objective.failed(point.clone(), time, source, e.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    pub algorithm: Algorithm,
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    /// Stop once the best scalar reaches this value.
    #[serde(default)]
    pub target: Option<f64>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn one() -> usize {
    1
}

impl TuningConfig {
    pub fn new(algorithm: Algorithm, budget: usize, seed: u64) -> Self {
        Self { algorithm, budget, seed, workers: 1, target: None, optimizer: OptimizerConfig::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.budget == 0 {
            return Err(ConfigError::new("budget", "budget must be at least 1"));
        }
        if self.workers == 0 {
            return Err(ConfigError::new("workers", "workers must be at least 1"));
        }
        if self.target.is_some_and(|t| !t.is_finite()) {
            return Err(ConfigError::new("target", "target must be finite"));
        }
        Ok(())
    }
}

/// Objective settings before the time cap is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub weights: Weights,
    /// Seconds at which the time score reaches zero; defaults to twice the
    /// default point's time.
    #[serde(default)]
    pub time_cap: Option<f64>,
    #[serde(default)]
    pub metric: MetricKind,
}

impl ObjectiveSpec {
    pub fn new(weights: Weights) -> Self {
        Self { weights, time_cap: None, metric: MetricKind::ObjectDice }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.weights.validate()?;
        if let Some(c) = self.time_cap {
            if !(c > 0.0 && c.is_finite()) {
                return Err(ConfigError::new("time_cap", "time cap must be positive"));
            }
        }
        Ok(())
    }

    /// Fixes the time cap, deriving it from a default-point time if unset.
    pub fn resolve(&self, default_time: Option<f64>) -> Result<ObjectiveConfig, ConfigError> {
        let cap = match (self.time_cap, default_time) {
            (Some(c), _) => c,
            (None, Some(t)) if t > 0.0 && t.is_finite() => 2.0 * t,
            (None, _) => 1.0,
        };
        ObjectiveConfig::new(self.weights, cap, self.metric)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Budget,
    OptimizerFinished,
    Stalled,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningOutcome {
    pub algorithm: Algorithm,
    pub budget: usize,
    pub seed: u64,
    pub best_point: ParameterPoint,
    pub best: EvaluationResult,
    /// Executed evaluations in execution order.
    pub history: Vec<EvaluationResult>,
    pub executed: usize,
    pub cache_hits: usize,
    pub stop_reason: StopReason,
    #[serde(default)]
    pub time_cap: Option<f64>,
    /// The default point's evaluation, when it was run as the baseline.
    #[serde(default)]
    pub default: Option<EvaluationResult>,
    pub wall_seconds: f64,
}

/// Snapshot handed to progress observers after every batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub executed: usize,
    pub budget: usize,
    pub best: Option<EvaluationResult>,
}

/// The tuning loop over an arbitrary batch evaluator.
///
/// `baseline`, when given, is recorded as the first executed evaluation
/// (charged to the budget and cached) without being shown to the optimizer.
/// Batches are told in ask order, so the outcome does not depend on how the
/// evaluator schedules work.
pub fn tune_with<F>(
    space: Arc<ParameterSpace>,
    config: &TuningConfig,
    baseline: Option<EvaluationResult>,
    progress: &mut dyn FnMut(&Progress),
    mut evaluate_batch: F,
) -> Result<TuningOutcome, ConfigError>
where
    F: FnMut(&[ParameterPoint]) -> Vec<EvaluationResult>,
{
    config.validate()?;
    let started = Instant::now();
    let mut state = OptimizerState::new(config.algorithm, space.clone(), config.budget, config.seed, &config.optimizer);
    let mut cache: HashMap<Vec<usize>, EvaluationResult> = HashMap::new();
    let mut history: Vec<EvaluationResult> = Vec::new();
    let mut cache_hits = 0;
    let mut best: Option<usize> = None;
    let reached = |best: Option<usize>, history: &[EvaluationResult]| match (config.target, best) {
        (Some(t), Some(b)) => history[b].scalar >= t,
        _ => false,
    };
    let default = baseline.clone();
    if let Some(b) = baseline {
        let idx = space.indices_of(&b.point).map_err(|e| ConfigError::new("default_point", e.to_string()))?;
        cache.insert(idx, b.clone());
        history.push(b);
        best = Some(0);
        state.charge(1);
        progress(&Progress { executed: history.len(), budget: config.budget, best: history.first().cloned() });
    }
    let stop_reason = loop {
        if reached(best, &history) {
            break StopReason::Target;
        }
        if state.is_finished() {
            break if state.remaining() == 0 {
                StopReason::Budget
            } else if state.is_stalled() {
                StopReason::Stalled
            } else {
                StopReason::OptimizerFinished
            };
        }
        let batch = state.ask().expect("state is not finished");
        // First occurrence of each uncached grid point runs while budget lasts.
        let mut room = state.remaining();
        let mut to_run: Vec<ParameterPoint> = Vec::new();
        let mut run_slot: HashMap<Vec<usize>, usize> = HashMap::new();
        for c in &batch {
            if room > 0 && !cache.contains_key(&c.indices) && !run_slot.contains_key(&c.indices) {
                run_slot.insert(c.indices.clone(), to_run.len());
                to_run.push(c.point.clone());
                room -= 1;
            }
        }
        let results = if to_run.is_empty() { Vec::new() } else { evaluate_batch(&to_run) };
        assert_eq!(results.len(), to_run.len(), "evaluator must return one result per point");
        let mut outcomes = Vec::with_capacity(batch.len());
        for c in &batch {
            if let Some(&slot) = run_slot.get(&c.indices) {
                if !cache.contains_key(&c.indices) {
                    let r = results[slot].clone();
                    history.push(r.clone());
                    let i = history.len() - 1;
                    if best.is_none_or(|b| r.scalar > history[b].scalar) {
                        best = Some(i);
                    }
                    outcomes.push(Outcome::Executed(r.scalar));
                    cache.insert(c.indices.clone(), r);
                    continue;
                }
            }
            match cache.get(&c.indices) {
                Some(r) => {
                    cache_hits += 1;
                    outcomes.push(Outcome::Cached(r.scalar));
                }
                None => outcomes.push(Outcome::Skipped),
            }
        }
        state.tell(&outcomes).expect("outcomes match the asked batch");
        progress(&Progress { executed: history.len(), budget: config.budget, best: best.map(|b| history[b].clone()) });
    };
    let Some(b) = argmax_first(history.iter().map(|r| r.scalar)) else {
        return Err(ConfigError::new("budget", "no evaluation was executed"));
    };
    Ok(TuningOutcome {
        algorithm: config.algorithm,
        budget: config.budget,
        seed: config.seed,
        best_point: history[b].point.clone(),
        best: history[b].clone(),
        executed: history.len(),
        history,
        cache_hits,
        stop_reason,
        time_cap: None,
        default,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Everything needed for one tuning run.
#[derive(Debug, Clone)]
pub struct TuningJob {
    pub space: Arc<ParameterSpace>,
    pub workflow: WorkflowSpec,
    pub samples: Vec<Sample>,
    pub objective: ObjectiveSpec,
    pub config: TuningConfig,
    /// Baseline evaluated first; the space's default point when unset.
    pub default_point: Option<ParameterPoint>,
}

impl TuningJob {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.config.validate()?;
        self.objective.validate()?;
        self.workflow.validate(&self.space)?;
        if self.samples.is_empty() {
            return Err(ConfigError::new("inputs", "at least one input image is required"));
        }
        if let Some(p) = &self.default_point {
            self.space.indices_of(p).map_err(|e| ConfigError::new("default_point", e.to_string()))?;
        }
        Ok(())
    }

    pub fn run(&self) -> Result<TuningOutcome, RunError> {
        self.run_with_progress(&mut |_| {})
    }

    pub fn run_with_progress(&self, progress: &mut dyn FnMut(&Progress)) -> Result<TuningOutcome, RunError> {
        self.validate()?;
        let mut samples = self.samples.clone();
        if matches!(self.workflow, WorkflowSpec::Synthetic) {
            for s in &mut samples {
                s.load_pixels()?;
            }
        }
        let space = &self.space;
        let default_point = self.default_point.clone().unwrap_or_else(|| space.default_point());
        let metric = self.objective.metric;
        let (quality, default_time) = measure(space, &default_point, &self.workflow, &samples, metric);
        if let Err(e) = &quality {
            log::warn!("default point failed: {e}");
        }
        let objective = self.objective.resolve(quality.as_ref().ok().map(|_| default_time))?;
        let source = self.workflow.time_source();
        let baseline = match quality.map(|q| objective.evaluate(default_point.clone(), q, default_time, source)) {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => objective.failed(default_point.clone(), default_time, source, e.to_string()),
            Err(e) => objective.failed(default_point.clone(), default_time, source, e.to_string()),
        };
        let pool = WorkerPool::new(self.config.workers);
        let mut outcome = tune_with(space.clone(), &self.config, Some(baseline), progress, |points| {
            pool.map(points, |p| evaluate_point(space, p, &self.workflow, &samples, &objective))
        })?;
        outcome.time_cap = Some(objective.time_cap());
        Ok(outcome)
    }
}
