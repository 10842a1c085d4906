//! Batch experiment harness behind the `cellevac` binary.
//!
//! Every CSV written here starts with `# `-prefixed lines holding the fully
//! resolved [`ExperimentSpec`] as TOML; [`ExperimentSpec::from_csv_header`]
//! reads it back, so any output can be regenerated from itself.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::controller::{BetaConfig, Selection};
use crate::error::{Error, Result};
use crate::optimizer::{optimize, OptimizeResult, SearchSpace, SimulationObjective, TabuParams};
use crate::positioning::{ChannelParams, PropagationModel};
use crate::replication::{run_replicated, ReplicationPolicy, RunSummary};
use crate::scenario::ScenarioLayout;
use crate::sfm::{run_evacuation, InflowConfig, RunConfig, ScenarioKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Run,
    Sweep,
    Optimize,
}

/// A shadowing level in dB, or the unguided baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SigmaSpec {
    Db(f64),
    None,
}

impl SigmaSpec {
    pub fn channel(&self, model: PropagationModel) -> ChannelParams {
        match *self {
            SigmaSpec::Db(s) => ChannelParams { sigma_g_db: s, model, ..Default::default() },
            SigmaSpec::None => ChannelParams { model, ..ChannelParams::unguided() },
        }
    }
}

impl fmt::Display for SigmaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaSpec::Db(s) => write!(f, "{s}"),
            SigmaSpec::None => f.write_str("none"),
        }
    }
}

impl FromStr for SigmaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") || s.eq_ignore_ascii_case("n") {
            return Ok(SigmaSpec::None);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(SigmaSpec::Db(v)),
            _ => Err(Error::schema("sigma", format!("expected a non-negative dB value or `none`, got `{s}`"))),
        }
    }
}

impl TryFrom<String> for SigmaSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SigmaSpec> for String {
    fn from(s: SigmaSpec) -> String {
        s.to_string()
    }
}

/// Fully resolved description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Scenario file; the built-in reference arena when absent.
    pub scenario: Option<PathBuf>,
    pub mode: Mode,
    pub sigma: Vec<SigmaSpec>,
    pub kind: ScenarioKind,
    /// Profile name or path the coefficients came from.
    pub beta_profile: String,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    pub deadline_min: f64,
    pub scale: f64,
    pub lambda: f64,
    pub model: PropagationModel,
    pub selection: Selection,
    pub trajectory: bool,
    pub beta: BetaConfig,
    pub replication: ReplicationPolicy,
    pub inflow: InflowConfig,
    pub tabu: TabuParams,
    pub search: SearchSpace,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            scenario: None,
            mode: Mode::Run,
            sigma: vec![SigmaSpec::Db(0.0)],
            kind: ScenarioKind::Nef,
            beta_profile: "optimal_0db".into(),
            seed: 0,
            out: PathBuf::from("out"),
            workers: 1,
            deadline_min: 25.0,
            scale: 1.0,
            lambda: 1.0,
            model: PropagationModel::Simplified,
            selection: Selection::Sample,
            trajectory: false,
            beta: BetaConfig::profile("optimal_0db").expect("built-in profile"),
            replication: ReplicationPolicy::default(),
            inflow: InflowConfig::default(),
            tabu: TabuParams::default(),
            search: SearchSpace::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment settings serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// `# `-prefixed header lines.
    pub fn header(&self) -> String {
        self.to_toml().lines().map(|l| format!("# {l}\n")).collect()
    }

    /// Recovers the experiment settings embedded in the header of an output file.
    pub fn from_csv_header(text: &str) -> Result<Self> {
        let toml: String = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| format!("{}\n", l.strip_prefix("# ").unwrap_or(&l[1..])))
            .collect();
        ExperimentSpec::from_toml(&toml)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_empty() {
            return Err(Error::schema("sigma", "at least one value is required"));
        }
        match self.mode {
            Mode::Sweep if self.sigma.len() < 2 => {
                return Err(Error::schema("sigma", "a sweep needs at least two values"));
            }
            Mode::Run | Mode::Optimize if self.sigma.len() != 1 => {
                return Err(Error::schema("sigma", "run and optimize take exactly one value"));
            }
            _ => {}
        }
        if self.workers == 0 {
            return Err(Error::schema("workers", "must be at least 1"));
        }
        if !(self.deadline_min > 0.0) {
            return Err(Error::schema("deadline_min", "must be positive"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::schema("scale", "must be positive"));
        }
        if !self.lambda.is_finite() {
            return Err(Error::schema("lambda", "must be finite"));
        }
        if !self.beta.is_finite() {
            return Err(Error::schema("beta", "coefficients must be finite"));
        }
        self.replication.validate()?;
        if self.mode == Mode::Optimize {
            self.search.validate()?;
            if self.tabu.budget == 0 {
                return Err(Error::schema("tabu.budget", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<ScenarioLayout> {
        match &self.scenario {
            None => Ok(ScenarioLayout::reference()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::schema("scenario", format!("cannot read {}: {e}", p.display())))?;
                crate::scenario::load_scenario(&text)
            }
        }
    }

    /// Run configuration for one shadowing level.
    pub fn run_config(&self, sigma: SigmaSpec) -> RunConfig {
        RunConfig {
            beta: self.beta,
            channel: sigma.channel(self.model),
            kind: self.kind,
            seed: self.seed,
            deadline_s: self.deadline_min * 60.0,
            scale: self.scale,
            inflow: self.inflow,
            selection: self.selection,
            ..RunConfig::default()
        }
    }

    fn profile_label(&self, sigma: SigmaSpec) -> String {
        match sigma {
            SigmaSpec::None => "standard_no_cellevac".into(),
            SigmaSpec::Db(_) => self.beta_profile.clone(),
        }
    }
}

/// Coefficients named by a built-in profile or a file of `beta_X = v` lines.
pub fn resolve_beta(source: &str) -> Result<BetaConfig> {
    if let Some(b) = BetaConfig::profile(source) {
        return Ok(b);
    }
    let path = Path::new(source);
    if path.exists() {
        return BetaConfig::from_toml(&fs::read_to_string(path)?);
    }
    Err(Error::schema("beta", format!("`{source}` is neither a profile name nor a readable file")))
}

/// Command-line flags; any flag given overrides the `--config` document.
#[derive(Debug, Clone, Default, Parser)]
#[command(name = "cellevac", version, about = "Cell-based evacuation guidance experiments")]
pub struct Cli {
    /// Experiment TOML, or a CSV produced by an earlier invocation.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Shadowing levels in dB, or `none`; comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_sigma)]
    pub sigma: Option<Vec<SigmaSpec>>,
    /// NEF or EF.
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<ScenarioKind>,
    /// Profile name or coefficient file.
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps_min: Option<usize>,
    #[arg(long)]
    pub reps_max: Option<usize>,
    #[arg(long)]
    pub confidence: Option<f64>,
    #[arg(long)]
    pub error_pct: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub deadline_min: Option<f64>,
    /// Population and inflow scale factor.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Weight of average safety in the fitness.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub tenure: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Inflow rate per gate, pedestrians per minute.
    #[arg(long)]
    pub inflow_rate: Option<f64>,
    /// simplified (alias eq6) or log_distance (alias eq5).
    #[arg(long, value_parser = parse_model)]
    pub model: Option<PropagationModel>,
    /// Take the most likely exit instead of sampling.
    #[arg(long)]
    pub argmax: bool,
    /// Also write the trajectory log of the first replication.
    #[arg(long)]
    pub trajectory: bool,
}

fn parse_sigma(s: &str) -> std::result::Result<SigmaSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kind(s: &str) -> std::result::Result<ScenarioKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_model(s: &str) -> std::result::Result<PropagationModel, String> {
    match s.to_ascii_lowercase().as_str() {
        "eq6" | "simplified" => Ok(PropagationModel::Simplified),
        "eq5" | "log_distance" => Ok(PropagationModel::LogDistance),
        _ => Err(format!("expected simplified or log_distance, got `{s}`")),
    }
}

impl Cli {
    pub fn to_spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::schema("config", format!("cannot read {}: {e}", p.display())))?;
                if text.starts_with('#') {
                    ExperimentSpec::from_csv_header(&text)?
                } else {
                    ExperimentSpec::from_toml(&text)?
                }
            }
            None => ExperimentSpec::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { spec.$($field).+ = v; })*
            };
        }
        set!(
            mode => mode, sigma => sigma, kind => kind, seed => seed,
            out => out, workers => workers, deadline_min => deadline_min, scale => scale,
            lambda => lambda, model => model,
            reps_min => replication.min_reps, reps_max => replication.max_reps,
            confidence => replication.confidence, error_pct => replication.error_percent,
            budget => tabu.budget, tenure => tabu.tenure, max_iters => tabu.max_iters,
            inflow_rate => inflow.rate_per_min,
        );
        if let Some(p) = &self.scenario {
            spec.scenario = Some(p.clone());
        }
        if let Some(b) = &self.beta {
            spec.beta = resolve_beta(b)?;
            spec.beta_profile = b.clone();
        }
        if self.argmax {
            spec.selection = Selection::Argmax;
        }
        if self.trajectory {
            spec.trajectory = true;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// One CSV row per replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub sigma_g: String,
    pub rep: usize,
    pub seed: u64,
    pub scenario_kind: String,
    pub beta_profile: String,
    pub evac_time_s: f64,
    pub avg_safety: f64,
    pub safety_var: f64,
    pub mean_changes: f64,
    pub viable: bool,
    pub inflow_exits: String,
    pub blocked_exit: String,
    pub misresolution_rate: f64,
}

fn rows_for(spec: &ExperimentSpec, layout: &ScenarioLayout, sigma: SigmaSpec, s: &RunSummary) -> Vec<MetricsRow> {
    s.records
        .iter()
        .map(|r| {
            let (ins, blocked) = match &r.ef {
                Some(d) => (
                    d.inflow_exits.iter().map(|e| layout.exits[e.0].id.to_string()).collect::<Vec<_>>().join(";"),
                    layout.exits[d.blocked_exit.0].id.to_string(),
                ),
                None => (String::new(), String::new()),
            };
            MetricsRow {
                sigma_g: sigma.to_string(),
                rep: r.rep,
                seed: r.seed,
                scenario_kind: spec.kind.to_string(),
                beta_profile: spec.profile_label(sigma),
                evac_time_s: r.metrics.total_evac_time,
                avg_safety: r.metrics.avg_safety,
                safety_var: r.metrics.safety_variance,
                mean_changes: r.metrics.mean_decision_changes,
                viable: r.metrics.viable,
                inflow_exits: ins,
                blocked_exit: blocked,
                misresolution_rate: if r.resolutions == 0 { 0.0 } else { r.misresolutions as f64 / r.resolutions as f64 },
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, spec: &ExperimentSpec, rows: &[T]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(spec.header().as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn replicated(layout: &ScenarioLayout, spec: &ExperimentSpec, sigma: SigmaSpec) -> Result<RunSummary> {
    let config = spec.run_config(sigma);
    in_pool(spec.workers, || run_replicated(layout, &config, &spec.replication, spec.workers))?
        .map_err(|e| e.source)
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn summarize(sigma: SigmaSpec, s: &RunSummary) -> String {
    format!(
        "sigma={sigma}: n={} evac={:.2}s safety={:.3} safety_var={:.3} changes={:.3} viable={:.0}%",
        s.n,
        s.evac_time.mean,
        s.avg_safety.mean,
        s.safety_variance.mean,
        s.decision_changes.mean,
        100.0 * s.viable_fraction
    )
}

/// One replicated evaluation: `metrics.csv` plus an optional `trajectory.csv`.
pub fn cmd_run(spec: &ExperimentSpec) -> Result<Report> {
    let layout = spec.layout()?;
    let sigma = spec.sigma[0];
    fs::create_dir_all(&spec.out)?;
    let summary = replicated(&layout, spec, sigma)?;
    let metrics_path = spec.out.join("metrics.csv");
    write_csv(&metrics_path, spec, &rows_for(spec, &layout, sigma, &summary))?;
    let mut files = vec![metrics_path];
    if spec.trajectory {
        let first = &summary.records[0];
        let config = RunConfig { seed: first.seed, record_trajectory: true, ..spec.run_config(sigma) };
        let out = run_evacuation(&layout, &config)?;
        let rows: Vec<TrajectoryCsvRow> = out
            .trajectory
            .unwrap_or_default()
            .iter()
            .map(|r| TrajectoryCsvRow {
                time: r.time,
                ped_id: r.ped_id,
                x: r.x,
                y: r.y,
                believed_cell: r.believed_cell.0,
                assigned_exit: layout.exits[r.assigned_exit.0].id,
            })
            .collect();
        let path = spec.out.join("trajectory.csv");
        write_csv(&path, spec, &rows)?;
        files.push(path);
    }
    Ok(Report { files, summary: summarize(sigma, &summary) })
}

#[derive(Debug, Clone, Copy, Serialize)]
struct TrajectoryCsvRow {
    time: f64,
    ped_id: usize,
    x: f64,
    y: f64,
    believed_cell: usize,
    assigned_exit: u32,
}

/// Replicated runs for every sigma into one long-format `sweep.csv`.
pub fn cmd_sweep(spec: &ExperimentSpec) -> Result<Report> {
    let layout = spec.layout()?;
    fs::create_dir_all(&spec.out)?;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for &sigma in &spec.sigma {
        let s = replicated(&layout, spec, sigma)?;
        rows.extend(rows_for(spec, &layout, sigma, &s));
        lines.push(summarize(sigma, &s));
    }
    let path = spec.out.join("sweep.csv");
    write_csv(&path, spec, &rows)?;
    Ok(Report { files: vec![path], summary: lines.join("\n") })
}

#[derive(Debug, Clone, Serialize)]
struct TraceRow {
    iteration: usize,
    eval_index: usize,
    #[serde(rename = "beta_D")]
    beta_d: f64,
    #[serde(rename = "beta_G")]
    beta_g: f64,
    #[serde(rename = "beta_E")]
    beta_e: f64,
    #[serde(rename = "beta_W")]
    beta_w: f64,
    #[serde(rename = "beta_C")]
    beta_c: f64,
    fitness: f64,
    viable: bool,
    best_so_far: f64,
}

/// Tabu search from the configured coefficients: `trace.csv` and, when a
/// viable point was found, `best_profile.toml`.
pub fn cmd_optimize(spec: &ExperimentSpec) -> Result<(Report, OptimizeResult)> {
    let layout = spec.layout()?;
    fs::create_dir_all(&spec.out)?;
    let objective = SimulationObjective {
        layout: &layout,
        base: spec.run_config(spec.sigma[0]),
        policy: spec.replication,
        lambda: spec.lambda,
        workers: spec.workers,
    };
    let start = spec.search.snap(&spec.beta);
    let result = in_pool(spec.workers, || optimize(&objective, &spec.search, &spec.tabu, start))??;
    let rows: Vec<TraceRow> = result
        .trace
        .iter()
        .map(|e| TraceRow {
            iteration: e.iteration,
            eval_index: e.eval_index,
            beta_d: e.beta.distance,
            beta_g: e.beta.group,
            beta_e: e.beta.excon,
            beta_w: e.beta.width,
            beta_c: e.beta.nochanging,
            fitness: e.fitness,
            viable: e.viable,
            best_so_far: e.best_so_far,
        })
        .collect();
    let trace_path = spec.out.join("trace.csv");
    write_csv(&trace_path, spec, &rows)?;
    let mut files = vec![trace_path];
    let (best, fit) = result.best_or_error()?;
    let profile_path = spec.out.join("best_profile.toml");
    fs::write(&profile_path, format!("{}{}", spec.header(), best.to_toml()))?;
    files.push(profile_path);
    let summary = format!(
        "best fitness {fit:.4} after {} evaluations: beta_D={} beta_G={} beta_E={} beta_W={} beta_C={}",
        result.evaluations(),
        best.distance,
        best.group,
        best.excon,
        best.width,
        best.nochanging
    );
    Ok((Report { files, summary }, result))
}

/// Dispatches on `spec.mode`.
pub fn execute(spec: &ExperimentSpec) -> Result<Report> {
    match spec.mode {
        Mode::Run => cmd_run(spec),
        Mode::Sweep => cmd_sweep(spec),
        Mode::Optimize => cmd_optimize(spec).map(|(r, _)| r),
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let spec = match cli.to_spec() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("usage error: {e}");
            return 2;
        }
    };
    match execute(&spec) {
        Ok(report) => {
            println!("{}", report.summary);
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(e @ Error::Schema { .. }) => {
            eprintln!("usage error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
