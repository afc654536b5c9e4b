//! Report documents and the on-disk run layout.
//!
//! A run directory holds:
//! - `steps.jsonl`: one [`StepRecord`] per processed sample, written as the run goes;
//! - `report.json`: the [`EvalReport`] summary;
//! - `rules.jsonl`: the final rule collection;
//! - `transcript.jsonl`: every model request and its outcome;
//! - `manifest.json`: what is needed to replay the run offline.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rulebook_core::engine::StepOutcome;
use rulebook_core::prompting::ParsedAnswer;
use rulebook_core::store::{LifecycleEvent, RuleId};
use rulebook_core::task::TaskSpec;
use serde::{Deserialize, Serialize};

use crate::config::{Baseline, Mode, RunConfig, SCHEMA_VERSION};
use crate::metrics::Metrics;

pub const STEPS_FILE: &str = "steps.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const RULES_FILE: &str = "rules.jsonl";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Stream,
    Train,
    Test,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Stream => "stream",
            Phase::Train => "train",
            Phase::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub answer: ParsedAnswer,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: Phase,
    pub outcome: StepOutcome,
    pub baseline: Option<BaselineRecord>,
    /// Whether the counterfactual transform changed this sample's label.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relabeled: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub steps: usize,
    pub accuracy: Option<f64>,
    pub baseline_accuracy: Option<f64>,
    pub mistakes: u64,
    pub baseline_mistakes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSummary {
    pub marker: String,
    pub modified_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub task_id: String,
    pub mode: Mode,
    pub baseline: Baseline,
    pub shuffle_seed: Option<u64>,
    /// Samples selected for the run (after shuffle and limit).
    pub sample_count: usize,
    /// Over every processed step, in processing order.
    pub metrics: Metrics,
    pub phases: BTreeMap<Phase, PhaseSummary>,
    pub counterfactual: Option<CounterfactualSummary>,
    /// How often each rule was retrieved into an answer prompt.
    pub rule_use_counts: BTreeMap<RuleId, u64>,
    pub lifecycle: Vec<LifecycleEvent>,
    pub final_rule_count: usize,
    pub rules_file: String,
    pub requests: usize,
    pub completed: bool,
    pub failure: Option<String>,
}

/// Everything needed to rerun a run against its transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config: RunConfig,
    pub task: TaskSpec,
    pub dataset: PathBuf,
    pub backend: String,
    pub rules_in: Option<PathBuf>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    anyhow::ensure!(
        manifest.schema_version == SCHEMA_VERSION,
        "unsupported manifest schema_version {}",
        manifest.schema_version
    );
    Ok(manifest)
}

pub fn read_steps(path: &Path) -> anyhow::Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Streams step records to a JSONL file, flushing after each line.
pub struct StepWriter<W: Write> {
    out: W,
}

impl<W: Write> StepWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &StepRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record).map_err(std::io::Error::other)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}
