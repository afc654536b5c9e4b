//! Command-line surface of the `rulebook` binary.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rulebook_core::gateway::{
    ChatBackend, Gateway, HttpBackend, OracleWorld, OracleWorldBackend, ReplayBackend, ScriptedBackend,
};
use rulebook_core::store::RuleCollection;
use rulebook_core::task::{TaskRegistry, TaskSpec};
use tracing::info;

use crate::config::{Baseline, Mode, RunConfig, SCHEMA_VERSION};
use crate::datasets::load_dataset;
use crate::report::{
    read_manifest, write_json, Manifest, StepWriter, MANIFEST_FILE, REPORT_FILE, RULES_FILE, STEPS_FILE,
    TRANSCRIPT_FILE,
};
use crate::runner::{run_experiment, select_samples};

#[derive(Debug, Parser)]
#[command(name = "rulebook", version, about = "Accumulate if-then rules from a frozen model's mistakes")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Process a stream of samples, learning rules from mistakes.
    Run(RunArgs),
    /// Learn on a train slice, then evaluate with frozen rules.
    TrainTest {
        #[command(flatten)]
        run: RunArgs,
        /// Fraction of samples used for training.
        #[arg(long)]
        split_ratio: Option<f64>,
    },
    /// Evaluate a task with rules learned on another (--rules-in).
    CrossDomain(RunArgs),
    /// Relabel marked samples with the positive label, then stream.
    Counterfactual {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        marker: Option<String>,
    },
    /// Print a rule snapshot, most used first.
    InspectRules {
        #[arg(long)]
        rules_in: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
        /// Print JSON lines instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Rerun a recorded run offline from its transcript and compare reports.
    ReplayTranscript {
        /// Directory of the recorded run.
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub task: Option<String>,
    /// http | scripted:<file> | oracle:<world.json> | replay:<transcript>
    #[arg(long, default_value = "http")]
    pub backend: BackendSpec,
    /// Shuffle seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub rules_in: Option<PathBuf>,
    /// Extra copy of the final rule snapshot.
    #[arg(long)]
    pub rules_out: Option<PathBuf>,
    #[arg(long)]
    pub few_shot: bool,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_parser = ["none", "zero_shot", "zero_shot_cot", "few_shot"])]
    pub baseline: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Http,
    Scripted(PathBuf),
    Oracle(PathBuf),
    Replay(PathBuf),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "http" {
            return Ok(BackendSpec::Http);
        }
        let (kind, path) = s
            .split_once(':')
            .ok_or_else(|| format!("expected http, scripted:<path>, oracle:<path> or replay:<path>, got {s:?}"))?;
        if path.is_empty() {
            return Err(format!("{kind}: missing path"));
        }
        let path = PathBuf::from(path);
        match kind {
            "scripted" => Ok(BackendSpec::Scripted(path)),
            "oracle" => Ok(BackendSpec::Oracle(path)),
            "replay" => Ok(BackendSpec::Replay(path)),
            other => Err(format!("unknown backend {other:?}")),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Http => write!(f, "http"),
            BackendSpec::Scripted(p) => write!(f, "scripted:{}", p.display()),
            BackendSpec::Oracle(p) => write!(f, "oracle:{}", p.display()),
            BackendSpec::Replay(p) => write!(f, "replay:{}", p.display()),
        }
    }
}

fn build_backend(spec: &BackendSpec, config: &RunConfig) -> anyhow::Result<Box<dyn ChatBackend>> {
    Ok(match spec {
        BackendSpec::Http => Box::new(HttpBackend::new(&config.gateway.http())?),
        BackendSpec::Scripted(p) => Box::new(ScriptedBackend::load(p, true)?),
        BackendSpec::Oracle(p) => Box::new(OracleWorldBackend::new(OracleWorld::load(p)?)),
        BackendSpec::Replay(p) => Box::new(ReplayBackend::load(p)?),
    })
}

fn absolute(path: &Path) -> PathBuf {
    std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

/// Applies CLI flags on top of the config file.
fn resolve_config(mode: Mode, args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.mode = mode;
    if let Some(task) = &args.task {
        config.task_id = task.clone();
    }
    if args.seed.is_some() {
        config.shuffle_seed = args.seed;
    }
    if args.limit.is_some() {
        config.sample_limit = args.limit;
    }
    if args.few_shot {
        config.engine.few_shot = true;
    }
    if let Some(b) = &args.baseline {
        config.baseline = serde_json::from_value::<Baseline>(serde_json::Value::String(b.clone()))?;
    }
    if let Some(rules) = &args.rules_in {
        config.source_rules = Some(rules.clone());
    }
    config.source_rules = config.source_rules.as_deref().map(absolute);
    config.tasks_file = config.tasks_file.as_deref().map(absolute);
    Ok(config)
}

fn task_spec(config: &RunConfig) -> anyhow::Result<TaskSpec> {
    let registry = match &config.tasks_file {
        Some(p) => TaskRegistry::load(p)?,
        None => TaskRegistry::builtin(),
    };
    Ok(registry.get(&config.task_id)?.clone())
}

/// Runs an experiment and writes every artifact under `out`. Returns whether
/// the run completed.
pub fn execute(manifest: &Manifest, backend: Box<dyn ChatBackend>, out: &Path, rules_out: Option<&Path>) -> anyhow::Result<bool> {
    let config = &manifest.config;
    config.validate()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join(MANIFEST_FILE), manifest)?;

    let samples = select_samples(config, load_dataset(&manifest.dataset, &manifest.task)?);
    let source = match &config.source_rules {
        Some(p) => Some(RuleCollection::load(p, config.engine.capacity).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let gateway = Gateway::from_boxed(backend, config.gateway.settings()).with_transcript_file(&out.join(TRANSCRIPT_FILE))?;
    let steps_file: Box<dyn Write> = Box::new(BufWriter::new(File::create(out.join(STEPS_FILE))?));
    let mut steps = StepWriter::new(steps_file);

    let output = run_experiment(config, &manifest.task, samples, &gateway, source, Some(&mut steps))?;
    write_json(&out.join(REPORT_FILE), &output.report)?;
    output.rules.save(&out.join(RULES_FILE))?;
    if let Some(path) = rules_out {
        output.rules.save(path)?;
    }
    if let Some(e) = &output.error {
        eprintln!("run stopped after {} steps: {e}", output.steps.len());
        return Ok(false);
    }
    info!(steps = output.steps.len(), rules = output.rules.len(), "run complete");
    Ok(true)
}

fn run_mode(mode: Mode, args: &RunArgs, tweak: impl FnOnce(&mut RunConfig)) -> anyhow::Result<bool> {
    let mut config = resolve_config(mode, args)?;
    tweak(&mut config);
    if config.task_id.is_empty() {
        bail!("no task given (use --task or task_id in the config file)");
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        task: task_spec(&config)?,
        dataset: absolute(&args.dataset),
        backend: args.backend.to_string(),
        rules_in: config.source_rules.clone(),
        config,
    };
    let backend = build_backend(&args.backend, &manifest.config)?;
    execute(&manifest, backend, &args.out, args.rules_out.as_deref())
}

fn inspect_rules(path: &Path, limit: Option<usize>, json: bool) -> anyhow::Result<()> {
    let rules = RuleCollection::load(path, usize::MAX)?;
    let mut sorted: Vec<_> = rules.iter().collect();
    sorted.sort_by(|a, b| b.use_count.cmp(&a.use_count).then(a.id.cmp(&b.id)));
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if !json {
        writeln!(out, "{:>5} {:>6} {:>8} {:>9}  {:<14} text", "id", "used", "created", "last_used", "origin")?;
    }
    for rule in sorted.into_iter().take(limit.unwrap_or(usize::MAX)) {
        if json {
            writeln!(out, "{}", serde_json::to_string(rule)?)?;
        } else {
            let origin = serde_json::to_value(rule.origin)?;
            writeln!(
                out,
                "{:>5} {:>6} {:>8} {:>9}  {:<14} {}",
                rule.id,
                rule.use_count,
                rule.created_step,
                rule.last_used_step,
                origin.as_str().unwrap_or_default(),
                rule.text
            )?;
        }
    }
    Ok(())
}

fn replay(from: &Path, out: &Path) -> anyhow::Result<bool> {
    let mut manifest = read_manifest(from)?;
    let transcript = from.join(TRANSCRIPT_FILE);
    let backend = Box::new(ReplayBackend::load(&transcript)?);
    manifest.backend = BackendSpec::Replay(absolute(&transcript)).to_string();
    let completed = execute(&manifest, backend, out, None)?;
    let original = std::fs::read(from.join(REPORT_FILE)).with_context(|| format!("reading {}", from.join(REPORT_FILE).display()))?;
    let replayed = std::fs::read(out.join(REPORT_FILE))?;
    if original != replayed {
        eprintln!("replayed report differs from {}", from.join(REPORT_FILE).display());
        return Ok(false);
    }
    println!("replayed report matches {}", from.join(REPORT_FILE).display());
    Ok(completed)
}

pub fn main_with(cli: Cli) -> ExitCode {
    let result = match &cli.command {
        Command::Run(args) => run_mode(Mode::Stream, args, |_| {}),
        Command::TrainTest { run, split_ratio } => run_mode(Mode::TrainTest, run, |c| {
            if split_ratio.is_some() {
                c.split_ratio = *split_ratio;
            }
        }),
        Command::CrossDomain(args) => run_mode(Mode::CrossDomain, args, |_| {}),
        Command::Counterfactual { run, marker } => run_mode(Mode::Counterfactual, run, |c| {
            if let Some(m) = marker {
                c.marker = m.clone();
            }
        }),
        Command::InspectRules { rules_in, limit, json } => inspect_rules(rules_in, *limit, *json).map(|_| true),
        Command::ReplayTranscript { from, out } => replay(from, out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
