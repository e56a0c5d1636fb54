//! Command-line surface.
//!
//! Every command resolves its configuration from flags, then an optional
//! `--config` file, then defaults, and embeds the resolved configuration in
//! each file it writes:
//!
//! * JSON outputs carry a top-level `run_config` object,
//! * CSV outputs start with a `# {...}` comment line holding the same header,
//! * EMB1 outputs store it in the manifest `provenance` string.
//!
//! Any of those files can be handed back through `--config` to replay the run.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, ErrorKind, Result};
use crate::fixture::{self, MixtureSpec};
use crate::iei::{self, Indicator, ScoreTable};
use crate::ood;
use crate::probe::{self, ProbeConfig, ProbeKind};
use crate::selection::{self, BudgetKind, BudgetScheme, Direction};
use crate::simulate::{self, CurveRecord, FittedScorer, LoopConfig};
use crate::store::{self, EmbeddingTable};
use crate::{fsutil, VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

const TOOL: &str = "infosel";

#[derive(Debug, Parser)]
#[command(name = "infosel", version, about = "Sample informativeness scoring and budgeted data selection")]
pub struct Cli {
    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Read unspecified settings from a config file or from any file this
    /// tool wrote (its embedded run config is used).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every sample of a table with one indicator.
    Score(ScoreArgs),
    /// Choose a budgeted goodset or badset from a score CSV.
    Select(SelectArgs),
    /// Run addition or reduction experiments (HID, LID and random arms).
    Simulate(SimulateArgs),
    /// Split a training domain into positive and negative migration sets.
    Split(SplitArgs),
    /// Fit a probe on one table and report accuracy on another.
    Eval(EvalArgs),
    /// Per-class mean, variance and ACI of a score CSV.
    Stats(StatsArgs),
    /// Write synthetic Gaussian-mixture tables.
    GenFixture(GenFixtureArgs),
    /// Convert between CSV and EMB1.
    Convert(ConvertArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Score(_) => "score",
            Command::Select(_) => "select",
            Command::Simulate(_) => "simulate",
            Command::Split(_) => "split",
            Command::Eval(_) => "eval",
            Command::Stats(_) => "stats",
            Command::GenFixture(_) => "gen-fixture",
            Command::Convert(_) => "convert",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    /// Input table (EMB1, or CSV).
    #[arg(long = "in", value_name = "FILE")]
    #[serde(rename = "input")]
    pub input: Option<PathBuf>,
    /// distance-entropy, entropy (probability entropy) or metric.
    #[arg(long)]
    pub indicator: Option<String>,
    /// Score CSV to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report path; defaults to the CSV path with a .json extension.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Table whose class means serve as prototypes; defaults to the input.
    #[arg(long)]
    pub prototypes_from: Option<PathBuf>,
    /// Scale every feature row to unit length before scoring.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub l2_normalize: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub input: PathBuf,
    pub indicator: String,
    pub out: PathBuf,
    pub report: Option<PathBuf>,
    pub prototypes_from: Option<PathBuf>,
    pub l2_normalize: bool,
    pub seed: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            input: PathBuf::new(),
            indicator: "distance-entropy".into(),
            out: PathBuf::new(),
            report: None,
            prototypes_from: None,
            l2_normalize: false,
            seed: 42,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    /// Score CSV written by `score`.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Total number of samples to select.
    #[arg(long)]
    pub budget: Option<usize>,
    /// balanced or unbalanced.
    #[arg(long)]
    pub scheme: Option<String>,
    /// goodset or badset.
    #[arg(long)]
    pub direction: Option<String>,
    /// Number of classes, if the score file does not cover all of them.
    #[arg(long)]
    pub n_classes: Option<usize>,
    /// Plan JSON to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub scores: PathBuf,
    pub budget: usize,
    pub scheme: String,
    pub direction: String,
    pub n_classes: Option<usize>,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            scores: PathBuf::new(),
            budget: 0,
            scheme: "balanced".into(),
            direction: "goodset".into(),
            n_classes: None,
            out: PathBuf::new(),
            seed: 42,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ProbeArgs {
    /// linear or nearest-prototype.
    #[arg(long)]
    pub probe: Option<String>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// add or reduce.
    pub mode: Option<String>,
    /// Base table (add mode).
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Pool table (add mode).
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Training table (reduce mode).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Held-out evaluation table.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub indicator: Option<String>,
    #[arg(long)]
    pub scheme: Option<String>,
    /// Per-round budget: below 1 it is a fraction of the initial universe,
    /// otherwise a sample count.
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub probe: ProbeArgs,
    /// Directory for per-arm CSV and JSON curves.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub mode: String,
    pub base: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub eval: PathBuf,
    pub indicator: String,
    pub scheme: String,
    pub budget: f64,
    pub rounds: usize,
    pub probe: String,
    pub step_size: f64,
    pub epochs: usize,
    pub l2: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let p = ProbeConfig::default();
        SimulateConfig {
            mode: String::new(),
            base: None,
            pool: None,
            train: None,
            eval: PathBuf::new(),
            indicator: "distance-entropy".into(),
            scheme: "balanced".into(),
            budget: 0.1,
            rounds: 9,
            probe: "linear".into(),
            step_size: p.step_size,
            epochs: p.epochs,
            l2: p.l2,
            out_dir: PathBuf::new(),
            seed: 42,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    /// Training-domain table.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Test-domain table; its class means are the prototypes.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Fraction of each class (closest first) that becomes positive.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Rank all samples together instead of per class.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub global: Option<bool>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    pub fraction: f64,
    pub global: bool,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: PathBuf::new(),
            test: PathBuf::new(),
            fraction: ood::DEFAULT_POSITIVE_FRACTION,
            global: false,
            out_dir: PathBuf::new(),
            seed: 42,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub probe: ProbeArgs,
    /// Comma-separated seeds, one fit per seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Report JSON to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    pub probe: String,
    pub step_size: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let p = ProbeConfig::default();
        EvalConfig {
            train: PathBuf::new(),
            test: PathBuf::new(),
            probe: "linear".into(),
            step_size: p.step_size,
            epochs: p.epochs,
            l2: p.l2,
            seeds: Vec::new(),
            out: None,
            seed: 42,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub scores: PathBuf,
    pub n_classes: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            scores: PathBuf::new(),
            n_classes: None,
            out: None,
            seed: 42,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenFixtureArgs {
    /// iid (base/pool/test) or ood (train/test with a shifted test domain).
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub separation_spread: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub stretch: Option<f64>,
    #[arg(long)]
    pub base_fraction: Option<f64>,
    #[arg(long)]
    pub domain_shift: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub with_logits: Option<bool>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenFixtureConfig {
    pub kind: String,
    #[serde(flatten)]
    pub mixture: MixtureSpec,
    pub out_dir: PathBuf,
}

impl Default for GenFixtureConfig {
    fn default() -> Self {
        GenFixtureConfig {
            kind: "iid".into(),
            mixture: MixtureSpec::default(),
            out_dir: PathBuf::new(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ConvertArgs {
    /// Source file; `.csv` converts to EMB1, anything else to CSV.
    #[arg(long = "in", value_name = "FILE")]
    #[serde(rename = "input")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Class count for CSV sources without logit columns.
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvertConfig {
    pub input: PathBuf,
    pub out: PathBuf,
    pub n_classes: Option<usize>,
    pub seed: u64,
}

impl Default for ConvertConfig {
    fn default() -> Self {
        ConvertConfig {
            input: PathBuf::new(),
            out: PathBuf::new(),
            n_classes: None,
            seed: 42,
        }
    }
}

/// Outcome of a command: a JSON summary for `--json` and a human line.
pub struct Outcome {
    pub summary: Value,
    pub message: String,
}

/// Parses `args` and runs the command. Usage errors are reported like any
/// other validation error; `--help` and `--version` print and exit 0.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) if e.use_stderr() => {
            let message = e.render().to_string();
            eprintln!(
                "{}",
                json!({"error": {"code": "USAGE", "message": message.trim(), "exit_code": EXIT_VALIDATION}})
            );
            EXIT_VALIDATION
        }
        Err(e) => {
            print!("{}", e.render());
            EXIT_OK
        }
    }
}

/// Runs the parsed command line and returns the process exit code, writing
/// the summary to stdout and errors as JSON to stderr.
pub fn run(cli: Cli) -> i32 {
    let json_mode = cli.json;
    match execute(cli) {
        Ok(out) => {
            if json_mode {
                println!("{}", out.summary);
            } else {
                println!("{}", out.message);
            }
            EXIT_OK
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!(
                "{}",
                json!({"error": {"code": e.code(), "message": e.to_string(), "exit_code": code}})
            );
            code
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Validation => EXIT_VALIDATION,
        ErrorKind::Io => EXIT_IO,
        ErrorKind::Runtime => EXIT_RUNTIME,
    }
}

pub fn execute(cli: Cli) -> Result<Outcome> {
    let name = cli.command.name();
    let file = cli.config.as_deref().map(|p| load_config_value(p, name)).transpose()?;
    match cli.command {
        Command::Score(a) => cmd_score(&resolve(file, &a)?),
        Command::Select(a) => cmd_select(&resolve(file, &a)?),
        Command::Simulate(a) => cmd_simulate(&resolve(file, &a)?),
        Command::Split(a) => cmd_split(&resolve(file, &a)?),
        Command::Eval(a) => cmd_eval(&resolve(file, &a)?),
        Command::Stats(a) => cmd_stats(&resolve(file, &a)?),
        Command::GenFixture(a) => cmd_gen_fixture(&resolve(file, &a)?),
        Command::Convert(a) => cmd_convert(&resolve(file, &a)?),
    }
}

/// Extracts a run config from a plain JSON config, a JSON output, a CSV
/// output's header comment, or an EMB1 output's provenance.
pub fn load_config_value(path: &Path, command: &str) -> Result<Value> {
    let bytes = fsutil::read(path)?;
    let doc: Value = if bytes.starts_with(store::MAGIC) {
        let table = EmbeddingTable::from_bytes(&bytes)?;
        serde_json::from_str(table.provenance()).map_err(|_| {
            Error::InvalidArgument(format!("{} carries no embedded run config", path.display()))
        })?
    } else if bytes.starts_with(b"#") {
        let line = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
        serde_json::from_slice(&line[1..])?
    } else {
        serde_json::from_slice(&bytes)?
    };
    let Value::Object(mut obj) = doc else {
        return Err(Error::InvalidArgument("config must be a JSON object".into()));
    };
    if let Some(Value::String(cmd)) = obj.get("command") {
        if cmd != command {
            return Err(Error::InvalidArgument(format!(
                "config was written by `{cmd}`, not `{command}`"
            )));
        }
    }
    match obj.remove("run_config") {
        Some(v @ Value::Object(_)) => Ok(v),
        Some(_) => Err(Error::InvalidArgument("run_config must be an object".into())),
        None => Ok(Value::Object(obj)),
    }
}

fn strip_nulls(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

/// Defaults, overlaid by the config file, overlaid by explicit flags.
pub fn resolve<C, A>(file: Option<Value>, flags: &A) -> Result<C>
where
    C: Default + Serialize + DeserializeOwned,
    A: Serialize,
{
    let mut merged = strip_nulls(serde_json::to_value(C::default())?);
    if let Some(f) = file {
        merged.extend(strip_nulls(f));
    }
    merged.extend(strip_nulls(serde_json::to_value(flags)?));
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
}

fn header<C: Serialize>(command: &str, config: &C) -> Result<Value> {
    Ok(json!({
        "tool": TOOL,
        "version": VERSION,
        "command": command,
        "run_config": serde_json::to_value(config)?,
    }))
}

fn with_header<C: Serialize>(command: &str, config: &C, body: Value) -> Result<Value> {
    let mut doc = header(command, config)?;
    if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
        d.extend(b);
    }
    Ok(doc)
}

fn write_json(path: &Path, doc: &Value) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(doc)?;
    bytes.push(b'\n');
    fsutil::write_atomic(path, &bytes)
}

fn csv_with_header(head: &Value, body: &[u8]) -> Vec<u8> {
    let mut out = format!("# {head}\n").into_bytes();
    out.extend_from_slice(body);
    out
}

fn require_path(p: &Path, flag: &str) -> Result<()> {
    if p.as_os_str().is_empty() {
        return Err(Error::InvalidArgument(format!("missing --{flag}")));
    }
    Ok(())
}

fn probe_config(kind: &str, step_size: f64, epochs: usize, l2: f64, seed: u64) -> Result<ProbeConfig> {
    let kind = match kind.to_ascii_lowercase().replace('_', "-").as_str() {
        "linear" => ProbeKind::Linear,
        "nearest-prototype" | "prototype" => ProbeKind::NearestPrototype,
        other => return Err(Error::InvalidArgument(format!("unknown probe {other:?}"))),
    };
    if kind == ProbeKind::Linear && epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    Ok(ProbeConfig {
        kind,
        step_size,
        epochs,
        l2,
        seed,
    })
}

pub fn cmd_score(cfg: &ScoreConfig) -> Result<Outcome> {
    require_path(&cfg.input, "in")?;
    require_path(&cfg.out, "out")?;
    let indicator: Indicator = cfg.indicator.parse()?;
    if indicator == Indicator::Random {
        return Err(Error::InvalidArgument("score needs distance-entropy, entropy or metric".into()));
    }
    let prep = |t: EmbeddingTable| if cfg.l2_normalize { iei::l2_normalized(&t) } else { Ok(t) };
    let table = prep(store::load_table(&cfg.input)?)?;
    let scores = match indicator {
        Indicator::ProbabilityEntropy => iei::probability_entropy_scores(&table)?,
        _ => {
            let source = match &cfg.prototypes_from {
                Some(p) => prep(store::load_table(p)?)?,
                None => table.clone(),
            };
            let protos = iei::class_prototypes(&source)?;
            if indicator == Indicator::Metric {
                iei::metric_scores(&table, &protos)?
            } else {
                iei::distance_entropy_scores(&table, &protos)?
            }
        }
    };
    let stats = selection::class_distribution_stats(&scores)?;
    let head = header("score", cfg)?;
    fsutil::write_atomic(&cfg.out, &csv_with_header(&head, &scores.to_csv()?))?;
    let report_path = cfg.report.clone().unwrap_or_else(|| cfg.out.with_extension("json"));
    let report = with_header("score", cfg, json!({"class_stats": stats, "scores": scores}))?;
    write_json(&report_path, &report)?;
    Ok(Outcome {
        summary: json!({
            "command": "score",
            "indicator": indicator,
            "n_samples": scores.len(),
            "out": cfg.out,
            "report": report_path,
            "class_stats": stats,
        }),
        message: format!(
            "scored {} samples with {indicator}; wrote {} and {}",
            scores.len(),
            cfg.out.display(),
            report_path.display()
        ),
    })
}

fn load_scores(path: &Path, n_classes: Option<usize>) -> Result<ScoreTable> {
    ScoreTable::from_csv(&fsutil::read(path)?, n_classes)
}

pub fn cmd_select(cfg: &SelectConfig) -> Result<Outcome> {
    require_path(&cfg.scores, "scores")?;
    require_path(&cfg.out, "out")?;
    let scheme = BudgetScheme::new(cfg.scheme.parse()?, cfg.budget)?;
    let direction: Direction = cfg.direction.parse()?;
    let scores = load_scores(&cfg.scores, cfg.n_classes)?;
    let stats = selection::class_distribution_stats(&scores)?;
    let plan = selection::select(&scores, &scheme, direction, &stats)?;
    write_json(&cfg.out, &with_header("select", cfg, json!({"plan": plan, "class_stats": stats}))?)?;
    Ok(Outcome {
        message: format!(
            "selected {} samples ({:?}, {}); per class {:?}; wrote {}",
            plan.selected_ids.len(),
            direction,
            scheme.kind,
            plan.per_class_budget,
            cfg.out.display()
        ),
        summary: json!({"command": "select", "out": cfg.out, "plan": plan}),
    })
}

fn resolve_budget(budget: f64, universe: usize) -> Result<usize> {
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::InvalidArgument(format!("budget must be positive, got {budget}")));
    }
    let n = if budget < 1.0 {
        (budget * universe as f64).round()
    } else {
        if budget.fract() != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "a budget of 1 or more is a sample count and must be whole, got {budget}"
            )));
        }
        budget
    };
    Ok((n as usize).max(1))
}

pub fn cmd_simulate(cfg: &SimulateConfig) -> Result<Outcome> {
    require_path(&cfg.eval, "eval")?;
    require_path(&cfg.out_dir, "out-dir")?;
    let addition = match cfg.mode.as_str() {
        "add" | "addition" => true,
        "reduce" | "reduction" => false,
        other => return Err(Error::InvalidArgument(format!("mode must be add or reduce, got {other:?}"))),
    };
    let indicator: Indicator = cfg.indicator.parse()?;
    let scheme: BudgetKind = cfg.scheme.parse()?;
    let probe = probe_config(&cfg.probe, cfg.step_size, cfg.epochs, cfg.l2, cfg.seed)?;
    let eval = store::load_table(&cfg.eval)?;
    let (first, pool) = if addition {
        let base = cfg.base.as_deref().ok_or_else(|| Error::InvalidArgument("missing --base".into()))?;
        let pool = cfg.pool.as_deref().ok_or_else(|| Error::InvalidArgument("missing --pool".into()))?;
        (store::load_table(base)?, Some(store::load_table(pool)?))
    } else {
        let train = cfg.train.as_deref().ok_or_else(|| Error::InvalidArgument("missing --train".into()))?;
        (store::load_table(train)?, None)
    };
    let universe = first.len() + pool.as_ref().map_or(0, EmbeddingTable::len);
    let round_budget = resolve_budget(cfg.budget, universe)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    // Addition: HID grows by goodsets, LID by badsets. Reduction: HID sheds
    // badsets, LID sheds goodsets.
    let (hid_dir, lid_dir) = if addition {
        (Direction::Goodset, Direction::Badset)
    } else {
        (Direction::Badset, Direction::Goodset)
    };
    let arms = [
        ("hid", indicator, hid_dir),
        ("lid", indicator, lid_dir),
        ("random", Indicator::Random, hid_dir),
    ];
    let head = header("simulate", cfg)?;
    let mut summary = Map::new();
    let mut lines = Vec::new();
    for (arm, ind, direction) in arms {
        let loop_cfg = LoopConfig {
            indicator: ind,
            scheme,
            direction,
            round_budget,
            rounds: cfg.rounds,
            probe,
            seed: cfg.seed,
        };
        let scorer = FittedScorer { seed: cfg.seed };
        let record: CurveRecord = match &pool {
            Some(pool) => simulate::addition_loop(&first, pool, &eval, &loop_cfg, &scorer),
            None => simulate::reduction_loop(&first, &eval, &loop_cfg, &scorer),
        }
        .map_err(|e| match e.kind() {
            ErrorKind::Io => e,
            _ => Error::Runtime(format!("{arm} arm: {e}")),
        })?;
        let csv_path = cfg.out_dir.join(format!("{arm}.csv"));
        fsutil::write_atomic(&csv_path, &csv_with_header(&head, record.to_csv().as_bytes()))?;
        let json_path = cfg.out_dir.join(format!("{arm}.json"));
        write_json(&json_path, &with_header("simulate", cfg, json!({"arm": arm, "curve": record}))?)?;
        lines.push(format!(
            "{arm:>6}: {}",
            record
                .points
                .iter()
                .map(|p| format!("{}:{:.4}", p.train_size, p.accuracy))
                .collect::<Vec<_>>()
                .join(" ")
        ));
        summary.insert(
            arm.to_string(),
            json!({"sizes": record.sizes(), "accuracy": record.accuracies(), "exhausted": record.exhausted}),
        );
    }
    Ok(Outcome {
        summary: json!({"command": "simulate", "round_budget": round_budget, "arms": summary}),
        message: format!("round budget {round_budget}\n{}", lines.join("\n")),
    })
}

pub fn cmd_split(cfg: &SplitConfig) -> Result<Outcome> {
    require_path(&cfg.train, "train")?;
    require_path(&cfg.test, "test")?;
    require_path(&cfg.out_dir, "out-dir")?;
    if !(cfg.fraction > 0.0 && cfg.fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must be strictly between 0 and 1, got {}",
            cfg.fraction
        )));
    }
    let train = store::load_table(&cfg.train)?;
    let test = store::load_table(&cfg.test)?;
    let protos = ood::test_domain_prototypes(&test)?;
    let distances = ood::migration_distances(&train, &protos)?;
    let split = ood::migration_split(&distances, cfg.fraction, !cfg.global)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let provenance = with_header("split", cfg, json!({"source_provenance": train.provenance()}))?.to_string();
    let pos_path = cfg.out_dir.join("positive.emb1");
    let neg_path = cfg.out_dir.join("negative.emb1");
    train.subset(&split.positive_ids)?.with_provenance(provenance.clone()).save(&pos_path)?;
    train.subset(&split.negative_ids)?.with_provenance(provenance).save(&neg_path)?;
    let manifest_path = cfg.out_dir.join("manifest.json");
    let manifest = with_header(
        "split",
        cfg,
        json!({
            "positive_ids": split.positive_ids,
            "negative_ids": split.negative_ids,
            "parameters": {"positive_fraction": split.positive_fraction, "per_class": split.per_class},
            "train_provenance": train.provenance(),
            "test_provenance": test.provenance(),
        }),
    )?;
    write_json(&manifest_path, &manifest)?;
    Ok(Outcome {
        summary: json!({
            "command": "split",
            "positive": split.positive_ids.len(),
            "negative": split.negative_ids.len(),
            "manifest": manifest_path,
        }),
        message: format!(
            "{} positive / {} negative; wrote {}, {}, {}",
            split.positive_ids.len(),
            split.negative_ids.len(),
            pos_path.display(),
            neg_path.display(),
            manifest_path.display()
        ),
    })
}

pub fn cmd_eval(cfg: &EvalConfig) -> Result<Outcome> {
    require_path(&cfg.train, "train")?;
    require_path(&cfg.test, "test")?;
    let train = store::load_table(&cfg.train)?;
    let test = store::load_table(&cfg.test)?;
    let seeds = if cfg.seeds.is_empty() { vec![cfg.seed] } else { cfg.seeds.clone() };
    let mut accuracies = Vec::with_capacity(seeds.len());
    let mut probe_cfg = probe_config(&cfg.probe, cfg.step_size, cfg.epochs, cfg.l2, seeds[0])?;
    for &s in &seeds {
        probe_cfg.seed = s;
        let model = probe::fit(&train, &probe_cfg)?;
        accuracies.push(probe::evaluate(&model, &test)?);
    }
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let std = (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accuracies.len() as f64).sqrt();
    let body = json!({
        "train_size": train.len(),
        "test_size": test.len(),
        "test_accuracy": mean,
        "accuracies": accuracies,
        "mean": mean,
        "std": std,
        "probe_config": probe_cfg,
        "seeds": seeds,
    });
    let report = with_header("eval", cfg, body.clone())?;
    if let Some(out) = &cfg.out {
        write_json(out, &report)?;
    }
    Ok(Outcome {
        message: format!(
            "train {} / test {}: accuracy {mean:.4} (std {std:.4} over {} seeds)",
            train.len(),
            test.len(),
            accuracies.len()
        ),
        summary: report,
    })
}

pub fn cmd_stats(cfg: &StatsConfig) -> Result<Outcome> {
    require_path(&cfg.scores, "scores")?;
    let scores = load_scores(&cfg.scores, cfg.n_classes)?;
    let stats = selection::class_distribution_stats(&scores)?;
    let report = with_header("stats", cfg, json!({"class_stats": stats}))?;
    if let Some(out) = &cfg.out {
        write_json(out, &report)?;
    }
    let mut lines = vec!["class  count  mean  variance  aci".to_string()];
    for c in &stats.classes {
        lines.push(format!(
            "{:>5} {:>6} {:.6} {:.6} {:+.4}",
            c.class, c.count, c.mean, c.variance, c.aci
        ));
    }
    Ok(Outcome {
        summary: report,
        message: lines.join("\n"),
    })
}

pub fn cmd_gen_fixture(cfg: &GenFixtureConfig) -> Result<Outcome> {
    require_path(&cfg.out_dir, "out-dir")?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let provenance = header("gen-fixture", cfg)?.to_string();
    let tables: Vec<(&str, EmbeddingTable)> = match cfg.kind.as_str() {
        "iid" => {
            let f = fixture::iid(&cfg.mixture)?;
            vec![("base", f.base), ("pool", f.pool), ("test", f.test)]
        }
        "ood" => {
            let f = fixture::ood(&cfg.mixture)?;
            vec![("train", f.train), ("test", f.test)]
        }
        other => return Err(Error::InvalidArgument(format!("kind must be iid or ood, got {other:?}"))),
    };
    let mut written = Vec::new();
    for (name, table) in tables {
        let path = cfg.out_dir.join(format!("{name}.emb1"));
        table.with_provenance(provenance.clone()).save(&path)?;
        written.push(path);
    }
    Ok(Outcome {
        message: format!(
            "wrote {}",
            written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
        ),
        summary: json!({"command": "gen-fixture", "files": written}),
    })
}

pub fn cmd_convert(cfg: &ConvertConfig) -> Result<Outcome> {
    require_path(&cfg.input, "in")?;
    require_path(&cfg.out, "out")?;
    let to_emb1 = cfg.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let head = header("convert", cfg)?;
    let n = if to_emb1 {
        let table = store::import_csv(&cfg.input, cfg.n_classes)?.with_provenance(head.to_string());
        table.save(&cfg.out)?;
        table.len()
    } else {
        let table = store::load_table(&cfg.input)?;
        fsutil::write_atomic(&cfg.out, &csv_with_header(&head, &store::export_csv(&table)?))?;
        table.len()
    };
    Ok(Outcome {
        summary: json!({"command": "convert", "rows": n, "out": cfg.out}),
        message: format!("converted {n} rows to {}", cfg.out.display()),
    })
}
