use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use atad_core::config::CampaignConfig;
use atad_core::metrics::fixtures;
use atad_core::metrics::report::{build_report, ReportInputs};
use atad_core::pipeline::{evaluate, generate, read_records, write_records};
use atad_core::protocol::JsonLinesSink;
use atad_core::store::{load_benchmark, Filter, LoadMode};
use atad_core::{ConfigError, DifficultyTier, ProtocolError, RunError, StoreError, TaskTypeId};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NO_RESULTS: u8 = 3;
const EXIT_CREDENTIAL: u8 = 4;

/// Evaluation record file written by `evaluate`.
const RECORDS_FILE: &str = "eval_records.jsonl";

#[derive(Parser)]
#[command(name = "atad", version, about = "Generate, evaluate and report text anomaly benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a generation campaign and write a benchmark store.
    Generate(GenerateArgs),
    /// Evaluate the configured models on a store.
    Evaluate(EvaluateArgs),
    /// Build accuracy, delta, bias, tier and consistency tables.
    Report(ReportArgs),
    /// Check every record and trajectory in a store.
    ValidateStore(ValidateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set protocol.max_init_loops=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replace every wire agent with a scripted one.
    #[arg(long)]
    scripted: bool,
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<TaskTypeId>>,
    #[arg(long)]
    samples_per_task: Option<u32>,
    /// Write progress events here instead of stderr.
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Store directory, generator directory, or task file.
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    final_only: bool,
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<TaskTypeId>>,
    #[arg(long, value_delimiter = ',')]
    tiers: Option<Vec<DifficultyTier>>,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation record files or directories.
    #[arg(long)]
    records: Vec<PathBuf>,
    /// Build the report from a directory of published accuracy tables.
    #[arg(long, conflicts_with = "records")]
    fixtures: Option<PathBuf>,
    /// CSV of `model,family`.
    #[arg(long)]
    families: Option<PathBuf>,
    /// CSV of `samples,T1,...` per generation round.
    #[arg(long)]
    rounds: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    reference_round: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    store: PathBuf,
    /// Skip corrupt lines instead of stopping at the first one.
    #[arg(long)]
    lenient: bool,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: EXIT_FAILURE, error }
    }
}

fn config_code(e: &ConfigError) -> u8 {
    match e {
        ConfigError::Credential(_) => EXIT_CREDENTIAL,
        _ => EXIT_CONFIG,
    }
}

fn run_failure(e: RunError) -> Failure {
    let code = match &e {
        RunError::Config(c) => config_code(c),
        RunError::Protocol(ProtocolError::Config(_)) => EXIT_CONFIG,
        RunError::Protocol(ProtocolError::AllTrajectoriesFailed) | RunError::NoRecords | RunError::Metrics(_) => {
            EXIT_NO_RESULTS
        }
        RunError::Store(StoreError::Io { .. }) => EXIT_NO_RESULTS,
        _ => EXIT_FAILURE,
    };
    Failure::new(code, e)
}

fn load_config(args: &ConfigArgs, extra: Vec<String>) -> Result<CampaignConfig, Failure> {
    let mut overrides = args.overrides.clone();
    overrides.extend(extra);
    let mut cfg = CampaignConfig::load(&args.config, &overrides).map_err(|e| Failure::new(config_code(&e), e))?;
    if args.scripted {
        cfg.force_scripted();
    }
    cfg.check_credentials().map_err(|e| Failure::new(config_code(&e), e))?;
    Ok(cfg)
}

fn default_concurrency() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    let mut extra = Vec::new();
    if let Some(seed) = a.seed {
        extra.push(format!("protocol.seed={seed}"));
    }
    if let Some(tasks) = &a.tasks {
        extra.push(format!("protocol.tasks={}", serde_json::to_string(tasks).expect("tasks serialize")));
    }
    if let Some(n) = a.samples_per_task {
        extra.push(format!("protocol.samples_per_task={n}"));
    }
    extra.push(format!("protocol.concurrency={}", a.common.concurrency.unwrap_or_else(default_concurrency)));
    let cfg = load_config(&a.common, extra)?;

    let summary = match &a.events {
        Some(path) => {
            let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            generate(&cfg, &a.out, &JsonLinesSink::new(f), now_ms())
        }
        None => generate(&cfg, &a.out, &JsonLinesSink::new(std::io::stderr()), now_ms()),
    }
    .map_err(run_failure)?;
    println!(
        "{}",
        serde_json::json!({"store": summary.store_dir, "items": summary.items, "stats": summary.stats})
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let cfg = load_config(&a.common, Vec::new())?;
    if !a.store.exists() {
        return Err(Failure::new(EXIT_NO_RESULTS, anyhow!("store {} does not exist", a.store.display())));
    }
    let filter = Filter { tasks: a.tasks, tiers: a.tiers, final_only: a.final_only, generator: None };
    let concurrency = a.common.concurrency.unwrap_or_else(default_concurrency);
    let records = evaluate(&cfg, &a.store, &filter, concurrency).map_err(run_failure)?;
    let path = a.out.join(RECORDS_FILE);
    write_records(&path, &records).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    println!("{}", serde_json::json!({"records": path, "count": records.len()}));
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let no_input = |e: anyhow::Error| Failure::new(EXIT_NO_RESULTS, e);
    let mut inputs = match &a.fixtures {
        Some(dir) => fixtures::report_inputs(dir).map_err(|e| no_input(e.into()))?,
        None => {
            if a.records.is_empty() {
                return Err(no_input(anyhow!("no --records or --fixtures given")));
            }
            let mut inputs = ReportInputs::default();
            for p in &a.records {
                inputs.records.extend(read_records(p).map_err(|e| no_input(e.into()))?);
            }
            inputs
        }
    };
    if let Some(p) = &a.families {
        inputs.families = Some(fixtures::load_families(p).map_err(|e| no_input(e.into()))?);
    }
    if let Some(p) = &a.rounds {
        inputs.rounds = Some(fixtures::load_rounds(p).map_err(|e| no_input(e.into()))?);
    }
    inputs.reference_round = a.reference_round;
    let report = build_report(&inputs).map_err(|e| no_input(e.into()))?;
    report.write(&a.out).with_context(|| format!("writing report to {}", a.out.display()))?;
    for note in &report.footnotes {
        eprintln!("note: {note}");
    }
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<(), Failure> {
    let mode = if a.lenient { LoadMode::Lenient } else { LoadMode::Strict };
    let loaded =
        load_benchmark(&a.store, &Filter::default(), mode).map_err(|e| Failure::new(EXIT_NO_RESULTS, e))?;
    let mut problems: Vec<String> = loaded.corrupt.iter().map(ToString::to_string).collect();
    for t in &loaded.trajectories {
        if let Err(e) = t.check_invariants() {
            problems.push(format!("trajectory {}: {e}", t.lineage_id));
        }
    }
    println!(
        "{}",
        serde_json::json!({"items": loaded.set.len(), "trajectories": loaded.trajectories.len(), "problems": problems})
    );
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_NO_RESULTS, anyhow!("{} problem(s) found", problems.len())))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => cmd_report(a),
        Command::ValidateStore(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
