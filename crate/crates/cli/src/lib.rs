//! `segtune` command-line front-end.
//!
//! Payloads go to stdout (JSON by default, `--format table` for people);
//! logs and diagnostics go to stderr. Exit codes: 0 success, 1 runtime
//! failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use thiserror::Error;

use segtune_core::error::ConfigError;
use segtune_core::maskdata::{Connectivity, LabelMask};
use segtune_core::metrics::{area_metrics, compare_masks, pixel_dice, pixel_jaccard, MetricKind};
use segtune_core::objective::Weights;
use segtune_core::optimizers::Algorithm;
use segtune_core::paramspace::{ParameterPoint, ParameterSpace};
use segtune_core::runner::{RunError, Sample, TuningOutcome, WorkflowSpec, DEFAULT_TIMEOUT_SECONDS};
use segtune_core::studies::{
    generate_dataset, generate_grouped_dataset, grouped_xval, monte_carlo_xval, weight_sweep, StudyConfig,
    StudyReport, WeightSpec,
};
use segtune_service::{RequestError, ServiceConfig, SpaceSource, TuneRequest, DEFAULT_PORT, STATE_DIR_ENV};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Usage(e.to_string())
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => c.into(),
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<RequestError> for CliError {
    fn from(e: RequestError) -> Self {
        match e {
            RequestError::Invalid(_) => Self::Usage(e.to_string()),
            RequestError::Unreadable(_) => Self::Runtime(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Parser)]
#[command(name = "segtune", version, about = "Multi-objective parameter tuning for segmentation workflows")]
pub struct Cli {
    #[arg(long, value_enum, default_value = "json", global = true)]
    pub format: Format,
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tune a workflow's parameters on a set of images.
    Tune(TuneArgs),
    /// Compare a computed mask with a reference mask.
    Metric(MetricArgs),
    /// Write a synthetic dataset of images and reference masks.
    Synth(SynthArgs),
    /// Tune under several weight sets and compare with the default point.
    Sweep(SweepArgs),
    /// Monte Carlo cross-validation, optionally per group of inputs.
    Xval(XvalArgs),
    /// Run the REST tuning service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WorkflowKind {
    Synthetic,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("wf").required(true).args(["workflow_cmd", "workflow"])))]
pub struct DataArgs {
    /// Parameter space file.
    #[arg(long)]
    pub space: PathBuf,
    /// Command template with `{input}`, `{output}` and one `{Name}` per dimension.
    #[arg(long)]
    pub workflow_cmd: Option<String>,
    /// Built-in workflow.
    #[arg(long, value_enum)]
    pub workflow: Option<WorkflowKind>,
    /// Seconds before an external command is killed.
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_SECONDS)]
    pub timeout: f64,
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long = "truth", required = true, num_args = 1..)]
    pub truths: Vec<PathBuf>,
    #[arg(long, default_value = "object-dice", value_parser = parse_metric)]
    pub metric: MetricKind,
    /// Seconds at which the time score reaches zero; twice the default point's time if unset.
    #[arg(long)]
    pub time_cap: Option<f64>,
    /// Baseline value as NAME=VALUE (repeatable); space defaults fill the rest.
    #[arg(long = "default", value_name = "NAME=VALUE")]
    pub defaults: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

impl DataArgs {
    fn workflow_spec(&self) -> WorkflowSpec {
        match &self.workflow_cmd {
            Some(cmd) => WorkflowSpec::ExternalCommand { command: cmd.clone(), timeout: self.timeout },
            None => WorkflowSpec::Synthetic,
        }
    }

    fn load_space(&self) -> Result<Arc<ParameterSpace>, CliError> {
        let text = std::fs::read_to_string(&self.space)
            .map_err(|e| CliError::Usage(format!("space {}: {e}", self.space.display())))?;
        Ok(Arc::new(ParameterSpace::from_json(&text)?))
    }

    fn defaults_json(&self) -> Result<Option<Value>, CliError> {
        if self.defaults.is_empty() {
            return Ok(None);
        }
        let mut map = Map::new();
        for d in &self.defaults {
            let (k, v) = d
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--default `{d}` is not NAME=VALUE")))?;
            let value = v.trim().parse::<f64>().map(Value::from).unwrap_or_else(|_| Value::from(v.trim()));
            map.insert(k.trim().to_string(), value);
        }
        Ok(Some(Value::Object(map)))
    }

    /// The space default with `--default` overrides applied.
    fn default_point(&self, space: &ParameterSpace) -> Result<Option<ParameterPoint>, CliError> {
        match self.defaults_json()? {
            Some(v) => Ok(Some(ParameterPoint::with_defaults(space, &v)?)),
            None => Ok(None),
        }
    }

    fn samples(&self) -> Result<Vec<Sample>, CliError> {
        if self.inputs.len() != self.truths.len() {
            return Err(CliError::Usage(format!(
                "{} --input values but {} --truth values",
                self.inputs.len(),
                self.truths.len()
            )));
        }
        self.inputs.iter().zip(&self.truths).map(|(i, t)| Sample::from_paths(i, t).map_err(CliError::from)).collect()
    }
}

fn parse_metric(s: &str) -> Result<MetricKind, String> {
    MetricKind::parse(s).ok_or_else(|| format!("unknown metric `{s}` (pixel-dice, pixel-jaccard, object-dice)"))
}

fn parse_weights(s: &str) -> Result<Weights, String> {
    Weights::parse(s).map_err(|e| e.message)
}

fn parse_weight_spec(s: &str) -> Result<WeightSpec, String> {
    WeightSpec::parse(s).map_err(|e| e.message)
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("size `{s}` is not WxH"))?;
    match (w.parse(), h.parse()) {
        (Ok(w), Ok(h)) if w > 0 && h > 0 => Ok((w, h)),
        _ => Err(format!("size `{s}` is not WxH with positive integers")),
    }
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = clap::builder::ValueParser::new(|s: &str| s.parse::<Algorithm>()))]
    pub algo: Algorithm,
    /// Quality and time weights summing to one, e.g. `4/5,1/5`.
    #[arg(long, value_parser = parse_weights)]
    pub weights: Weights,
    #[arg(long, default_value_t = 100)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop once the best scalar reaches this value.
    #[arg(long)]
    pub target: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricChoice {
    PixelDice,
    PixelJaccard,
    ObjectDice,
    Areas,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    #[arg(long)]
    pub computed: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// One metric; the full report when omitted.
    #[arg(long, value_enum)]
    pub metric: Option<MetricChoice>,
    #[arg(long, default_value = "8", value_parser = ["4", "8"])]
    pub connectivity: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_size, default_value = "128x128")]
    pub size: (usize, usize),
    /// Extra scenes of elongated objects, grouped separately from the first `n`.
    #[arg(long, default_value_t = 0)]
    pub elongated: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Algorithms to compare.
    #[arg(long, value_delimiter = ',', default_value = "ga,nm,pro,boa",
          value_parser = clap::builder::ValueParser::new(|s: &str| s.parse::<Algorithm>()))]
    pub algos: Vec<Algorithm>,
    /// Weight rows, `q,t` summing to one or a raw ratio `a:b` (repeatable);
    /// the four standard weight rows when omitted.
    #[arg(long = "weights", value_parser = parse_weight_spec)]
    pub weights: Vec<WeightSpec>,
    #[arg(long, default_value_t = 100)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl StudyArgs {
    fn config(&self, space: &ParameterSpace, repeats: usize) -> Result<StudyConfig, CliError> {
        let mut cfg = StudyConfig::new(self.algos.clone(), self.budget, repeats, self.seed);
        if !self.weights.is_empty() {
            cfg.weights = self.weights.clone();
        }
        cfg.workers = self.data.workers;
        cfg.time_cap = self.data.time_cap;
        cfg.metric = self.data.metric;
        cfg.default_point = self.data.default_point(space)?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
}

#[derive(Debug, Args)]
pub struct XvalArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Share of each (group's) images used for tuning.
    #[arg(long, default_value_t = 0.2)]
    pub fraction: f64,
    /// Consecutive inputs forming a group, as NAME=COUNT (repeatable).
    #[arg(long = "group", value_name = "NAME=COUNT")]
    pub groups: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, env = STATE_DIR_ENV, default_value = "segtune-state")]
    pub state_dir: PathBuf,
    /// Tasks running at once.
    #[arg(long, default_value_t = 1)]
    pub max_running: usize,
    /// Evaluation workers per task unless a request sets its own.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Enable `GET /tasks`.
    #[arg(long)]
    pub admin_list: bool,
    /// Keep at most this many finished tasks.
    #[arg(long)]
    pub retain: Option<usize>,
}

/// Parses `argv` and runs; clap handles `--help` and usage errors itself.
pub fn main_with<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match run(&cli) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Runs a parsed command and returns the stdout payload.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Tune(a) => tune(a, cli.format),
        Command::Metric(a) => metric(a, cli.format),
        Command::Synth(a) => synth(a, cli.format),
        Command::Sweep(a) => sweep(a, cli.format),
        Command::Xval(a) => xval(a, cli.format),
        Command::Serve(a) => serve(a),
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes")
}

fn tune(a: &TuneArgs, format: Format) -> Result<String, CliError> {
    let request = TuneRequest {
        space: SpaceSource::Path(a.data.space.clone()),
        workflow: a.data.workflow_spec(),
        inputs: a.data.inputs.clone(),
        truths: a.data.truths.clone(),
        weights: a.weights,
        time_cap: a.data.time_cap,
        metric: a.data.metric,
        algorithm: a.algo,
        budget: a.budget,
        seed: a.seed,
        workers: Some(a.data.workers),
        target: a.target,
        default_point: a.data.defaults_json()?,
        optimizer: Default::default(),
    };
    let job = match request.prepare(a.data.workers) {
        // the space file is a flag value, so a missing one is a usage error
        Err(RequestError::Unreadable(f)) if f.iter().any(|e| e.field == "space") => {
            return Err(CliError::Usage(RequestError::Unreadable(f).to_string()))
        }
        other => other?,
    };
    let outcome = job.run()?;
    log::info!("tuning took {:.2}s of wall time", outcome.wall_seconds);
    Ok(match format {
        Format::Json => pretty(&outcome_json(&outcome, &job.space)),
        Format::Table => outcome_table(&outcome, &job.space),
    })
}

/// Outcome JSON without wall time, so identical runs print identical bytes.
pub fn outcome_json(outcome: &TuningOutcome, space: &ParameterSpace) -> Value {
    let mut v = serde_json::to_value(outcome).expect("outcome serializes");
    let obj = v.as_object_mut().expect("outcome is an object");
    obj.remove("wall_seconds");
    obj.insert("best_params".into(), outcome.best_point.to_named_json(space));
    v
}

fn outcome_table(o: &TuningOutcome, space: &ParameterSpace) -> String {
    let mut rows = vec![
        ("algorithm".to_string(), o.algorithm.to_string()),
        ("executed".into(), format!("{} / {}", o.executed, o.budget)),
        ("stop reason".into(), serde_json::to_value(o.stop_reason).unwrap_or_default().as_str().unwrap_or("").into()),
        ("best scalar".into(), format!("{:.6}", o.best.scalar)),
        ("best quality".into(), format!("{:.6}", o.best.quality)),
        ("best time (s)".into(), format!("{:.6}", o.best.time_seconds)),
    ];
    if let Some(d) = &o.default {
        rows.push(("default scalar".into(), format!("{:.6}", d.scalar)));
        rows.push(("default quality".into(), format!("{:.6}", d.quality)));
    }
    for (name, value) in o.best_point.named(space) {
        rows.push((name.to_string(), value.to_string()));
    }
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}")).collect::<Vec<_>>().join("\n")
}

fn load_mask(path: &Path) -> Result<LabelMask, CliError> {
    LabelMask::load(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn metric(a: &MetricArgs, format: Format) -> Result<String, CliError> {
    let computed = load_mask(&a.computed)?;
    let reference = load_mask(&a.reference)?;
    let conn = Connectivity::from_label(&a.connectivity).expect("clap restricts connectivity");
    let value = match a.metric {
        Some(MetricChoice::PixelDice) => json!(pixel_dice(&computed, &reference).map_err(runtime)?),
        Some(MetricChoice::PixelJaccard) => json!(pixel_jaccard(&computed, &reference).map_err(runtime)?),
        Some(MetricChoice::ObjectDice) => {
            json!(compare_masks(&computed, &reference, conn).map_err(runtime)?.avg_object_dice)
        }
        Some(MetricChoice::Areas) => {
            let (overlap, non_overlap) = area_metrics(&computed, &reference).map_err(runtime)?;
            json!({"overlap_area": overlap, "non_overlap_area": non_overlap})
        }
        None => serde_json::to_value(compare_masks(&computed, &reference, conn).map_err(runtime)?)
            .expect("report serializes"),
    };
    Ok(match (format, &value) {
        (Format::Table, Value::Object(m)) => m
            .iter()
            .filter(|(_, v)| !v.is_array())
            .map(|(k, v)| format!("{k:<18}{v}"))
            .collect::<Vec<_>>()
            .join("\n"),
        (Format::Table, v) => v.to_string(),
        (Format::Json, v) if v.is_number() => v.to_string(),
        (Format::Json, v) => pretty(v),
    })
}

fn synth(a: &SynthArgs, format: Format) -> Result<String, CliError> {
    let (w, h) = a.size;
    let scenes = if a.elongated > 0 {
        generate_grouped_dataset(a.n, a.elongated, a.seed, w, h)?
    } else {
        generate_dataset(a.n, a.seed, w, h)?
    };
    std::fs::create_dir_all(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    let mut entries = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let image = a.out.join(format!("scene_{i:03}.pgm"));
        let truth = a.out.join(format!("scene_{i:03}_truth.pgm"));
        s.image.save(&image).map_err(|e| runtime(format!("{}: {e}", image.display())))?;
        s.truth.save(&truth).map_err(|e| runtime(format!("{}: {e}", truth.display())))?;
        entries.push(json!({
            "image": image,
            "truth": truth,
            "objects": s.object_count(),
            "group": s.group,
            "seed": s.seed,
        }));
    }
    Ok(match format {
        Format::Json => pretty(&json!({"width": w, "height": h, "scenes": entries})),
        Format::Table => entries
            .iter()
            .map(|e| format!("{}  {}  objects={}", e["image"].as_str().unwrap_or(""), e["truth"].as_str().unwrap_or(""), e["objects"]))
            .collect::<Vec<_>>()
            .join("\n"),
    })
}

fn render_report(report: &StudyReport, format: Format) -> String {
    match format {
        Format::Json => report.to_json(),
        Format::Table => report.to_table(),
    }
}

fn sweep(a: &SweepArgs, format: Format) -> Result<String, CliError> {
    let space = a.study.data.load_space()?;
    let cfg = a.study.config(&space, a.repeats)?;
    let workflow = a.study.data.workflow_spec();
    workflow.validate(&space)?;
    let samples = a.study.data.samples()?;
    Ok(render_report(&weight_sweep(space, &workflow, &samples, &cfg)?, format))
}

fn parse_groups(specs: &[String], samples: Vec<Sample>) -> Result<Vec<(String, Vec<Sample>)>, CliError> {
    let mut rest = samples.into_iter();
    let mut groups = Vec::new();
    let mut total = 0;
    for spec in specs {
        let (name, count) = spec
            .split_once('=')
            .and_then(|(n, c)| Some((n.trim(), c.trim().parse::<usize>().ok()?)))
            .ok_or_else(|| CliError::Usage(format!("--group `{spec}` is not NAME=COUNT")))?;
        total += count;
        groups.push((name.to_string(), rest.by_ref().take(count).collect::<Vec<_>>()));
    }
    let leftover = rest.count();
    if leftover > 0 || groups.iter().any(|(_, g)| g.is_empty()) || groups.iter().map(|(_, g)| g.len()).sum::<usize>() != total {
        return Err(CliError::Usage(format!("--group counts add up to {total}, which must equal the number of inputs")));
    }
    Ok(groups)
}

fn xval(a: &XvalArgs, format: Format) -> Result<String, CliError> {
    let space = a.study.data.load_space()?;
    let cfg = a.study.config(&space, a.repeats)?;
    let workflow = a.study.data.workflow_spec();
    workflow.validate(&space)?;
    let samples = a.study.data.samples()?;
    let report = if a.groups.is_empty() {
        monte_carlo_xval(space, &workflow, &samples, a.fraction, &cfg)?
    } else {
        grouped_xval(space, &workflow, &parse_groups(&a.groups, samples)?, a.fraction, &cfg)?
    };
    Ok(render_report(&report, format))
}

fn serve(a: &ServeArgs) -> Result<String, CliError> {
    if a.max_running == 0 || a.workers == 0 {
        return Err(CliError::Usage("--max-running and --workers must be at least 1".into()));
    }
    let config = ServiceConfig {
        state_dir: a.state_dir.clone(),
        max_running: a.max_running,
        workers: a.workers,
        admin_list: a.admin_list,
        retain: a.retain,
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    rt.block_on(segtune_service::serve(config, SocketAddr::new(a.host, a.port))).map_err(runtime)?;
    Ok(String::new())
}
