//! Experiment modes: stream, train/test, cross-domain and counterfactual.

use std::collections::BTreeMap;
use std::io::Write;

use rulebook_core::engine::{Engine, EngineError};
use rulebook_core::gateway::Gateway;
use rulebook_core::prompting::{parse_answer, render_basic, render_few_shot, ParsedAnswer, ParseMethod};
use rulebook_core::store::{RuleCollection, Sample};
use rulebook_core::task::TaskSpec;
use thiserror::Error;
use tracing::{info, warn};

use crate::config::{Baseline, ConfigError, Mode, RunConfig, SCHEMA_VERSION};
use crate::datasets::{make_counterfactual, shuffle, DatasetError};
use crate::metrics::{compute_metrics, MetricsError};
use crate::report::{
    BaselineRecord, CounterfactualSummary, EvalReport, Phase, PhaseSummary, StepRecord, StepWriter, RULES_FILE,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("writing steps: {0}")]
    Io(#[from] std::io::Error),
}

/// A finished (or aborted) run. `error` holds the step failure that ended the
/// run early; everything before it is reported.
pub struct RunOutput {
    pub report: EvalReport,
    pub steps: Vec<StepRecord>,
    pub rules: RuleCollection,
    pub error: Option<EngineError>,
}

/// Seeded shuffle, then the sample limit.
pub fn select_samples(config: &RunConfig, mut samples: Vec<Sample>) -> Vec<Sample> {
    if let Some(seed) = config.shuffle_seed {
        shuffle(&mut samples, seed);
    }
    if let Some(limit) = config.sample_limit {
        samples.truncate(limit);
    }
    samples
}

/// Train slice size for `n` samples: `round(n * ratio)`.
pub fn split_point(n: usize, ratio: f64) -> usize {
    ((n as f64) * ratio).round() as usize
}

fn baseline_answer(
    kind: Baseline,
    config: &RunConfig,
    engine: &Engine<'_>,
    gateway: &Gateway,
    sample: &Sample,
) -> Result<Option<ParsedAnswer>, EngineError> {
    let spec = engine.spec();
    let prompt = match kind {
        Baseline::None => return Ok(None),
        Baseline::ZeroShot => render_basic(spec, sample)?,
        Baseline::ZeroShotCot => render_basic(spec, sample)?.with_reasoning_preamble(),
        Baseline::FewShot => {
            let examples: Vec<(&Sample, &str)> = engine
                .similar_past_samples(sample, config.engine.few_shot_n)
                .into_iter()
                .map(|s| (s, s.gold_label.as_str()))
                .collect();
            render_few_shot(spec, sample, &examples, &[])?
        }
    };
    let reply = gateway.complete(prompt.messages())?;
    if kind == Baseline::ZeroShotCot {
        // Reasoning comes first; the conclusion is on the last line.
        if let Some(last) = reply.lines().rev().find(|l| !l.trim().is_empty()) {
            let parsed = parse_answer(spec, sample, last);
            if parsed.method != ParseMethod::Unparsed {
                return Ok(Some(ParsedAnswer { raw: reply, ..parsed }));
            }
        }
    }
    Ok(Some(parse_answer(spec, sample, &reply)))
}

fn phase_summary(steps: &[&StepRecord]) -> PhaseSummary {
    let correct: Vec<bool> = steps.iter().map(|s| s.outcome.correct).collect();
    let baseline: Option<Vec<bool>> = steps.iter().map(|s| s.baseline.as_ref().map(|b| b.correct)).collect();
    let acc = |v: &[bool]| (!v.is_empty()).then(|| v.iter().filter(|c| **c).count() as f64 / v.len() as f64);
    PhaseSummary {
        steps: steps.len(),
        accuracy: acc(&correct),
        baseline_accuracy: baseline.as_deref().and_then(acc),
        mistakes: correct.iter().filter(|c| !**c).count() as u64,
        baseline_mistakes: baseline.map(|b| b.iter().filter(|c| !**c).count() as u64),
    }
}

/// Runs one experiment over already-selected samples. `source_rules`
/// replaces the initial rule collection (cross-domain transfer or resuming).
pub fn run_experiment(
    config: &RunConfig,
    spec: &TaskSpec,
    samples: Vec<Sample>,
    gateway: &Gateway,
    source_rules: Option<RuleCollection>,
    mut steps_out: Option<&mut StepWriter<Box<dyn Write>>>,
) -> Result<RunOutput, RunError> {
    config.validate()?;
    let mut engine_config = config.engine.clone();
    if config.mode == Mode::CrossDomain {
        engine_config.rule_updates_enabled = false;
    }
    let mut engine = Engine::new(spec.clone(), engine_config, gateway)?;
    if let Some(rules) = source_rules {
        engine.set_rules(rules);
    }
    engine.preload(&config.preload_rules)?;

    let (samples, relabeled, counterfactual) = if config.mode == Mode::Counterfactual {
        let cf = make_counterfactual(spec, &samples, &config.marker)?;
        info!(modified = cf.modified_count, "counterfactual relabeling applied");
        let summary = CounterfactualSummary {
            marker: config.marker.clone(),
            modified_count: cf.modified_count,
        };
        (cf.samples, Some(cf.modified), Some(summary))
    } else {
        (samples, None, None)
    };

    let train_len = match config.mode {
        Mode::TrainTest => {
            let cut = split_point(samples.len(), config.split_ratio.unwrap_or_default());
            if cut == 0 || cut >= samples.len() {
                return Err(ConfigError::Invalid(format!(
                    "split ratio {:?} over {} samples leaves an empty slice",
                    config.split_ratio,
                    samples.len()
                ))
                .into());
            }
            cut
        }
        _ => samples.len(),
    };

    let mut steps = Vec::with_capacity(samples.len());
    let mut error = None;
    for (i, sample) in samples.iter().enumerate() {
        let phase = match config.mode {
            Mode::TrainTest if i < train_len => Phase::Train,
            Mode::TrainTest => Phase::Test,
            _ => Phase::Stream,
        };
        if config.mode == Mode::TrainTest && i == train_len {
            engine.set_rule_updates(false);
        }
        let result = baseline_answer(config.baseline, config, &engine, gateway, sample)
            .and_then(|b| Ok((b, engine.process_sample(sample)?)));
        let (baseline, outcome) = match result {
            Ok(pair) => pair,
            Err(e) => {
                warn!(step = i + 1, sample = %sample.id, error = %e, "run aborted");
                error = Some(e);
                break;
            }
        };
        let record = StepRecord {
            phase,
            baseline: baseline.map(|answer| BaselineRecord {
                correct: answer.label == sample.gold_label,
                answer,
            }),
            relabeled: relabeled.as_ref().map(|m| m[i]),
            outcome,
        };
        if let Some(out) = steps_out.as_deref_mut() {
            out.write(&record)?;
        }
        steps.push(record);
    }

    let correct: Vec<bool> = steps.iter().map(|s| s.outcome.correct).collect();
    let baseline: Option<Vec<bool>> = steps.iter().map(|s| s.baseline.as_ref().map(|b| b.correct)).collect();
    let mask: Option<Vec<bool>> = relabeled.map(|m| m[..steps.len()].to_vec());
    let metrics = compute_metrics(
        &correct,
        baseline.as_deref().filter(|_| config.baseline != Baseline::None),
        mask.as_deref(),
    )?;

    let mut phases = BTreeMap::new();
    for phase in [Phase::Stream, Phase::Train, Phase::Test] {
        let of_phase: Vec<&StepRecord> = steps.iter().filter(|s| s.phase == phase).collect();
        if !of_phase.is_empty() {
            phases.insert(phase, phase_summary(&of_phase));
        }
    }
    let mut rule_use_counts = BTreeMap::new();
    for step in &steps {
        for id in &step.outcome.retrieved_rule_ids {
            *rule_use_counts.entry(*id).or_insert(0u64) += 1;
        }
    }
    let rules = engine.rules().clone();
    let report = EvalReport {
        schema_version: SCHEMA_VERSION,
        task_id: spec.task_id.clone(),
        mode: config.mode,
        baseline: config.baseline,
        shuffle_seed: config.shuffle_seed,
        sample_count: samples.len(),
        metrics,
        phases,
        counterfactual,
        rule_use_counts,
        lifecycle: rules.events().to_vec(),
        final_rule_count: rules.len(),
        rules_file: RULES_FILE.into(),
        requests: gateway.request_count(),
        completed: error.is_none(),
        failure: error.as_ref().map(ToString::to_string),
    };
    Ok(RunOutput {
        report,
        steps,
        rules,
        error,
    })
}
