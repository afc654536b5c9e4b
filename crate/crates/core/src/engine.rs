//! The per-sample loop: answer with retrieved rules, and on a mistake derive,
//! validate, deduplicate and admit new rules.
//!
//! A step works on copies of the rule and mistake collections and only
//! commits them when every completion of the step succeeded, so a failed
//! request leaves the engine exactly as it was before the step.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info};

use crate::gateway::{ChatMessage, Gateway, GatewayError};
use crate::prompting::{
    build_checking_prompt, build_generating_dialogue, build_summarizing_prompt, parse_answer, parse_check_verdict,
    parse_rules, render_few_shot, CheckMode, ParsedAnswer, Prompt, TemplateError,
};
use crate::retrieval::{retrieve_mistakes, retrieve_rules, Corpus};
use crate::store::{
    MistakeCollection, RemovalReason, Rule, RuleCollection, RuleId, RuleOrigin, Sample, Step, StoreError,
    DEFAULT_CAPACITY,
};
use crate::task::TaskSpec;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("sample {id}: {reason}")]
    InvalidSample { id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Rules retrieved into each answer prompt.
    pub k_rules: usize,
    pub capacity: usize,
    /// Past mistakes retrieved for summarization.
    pub m_mistakes: usize,
    /// Existing rules checked against each new rule.
    pub n_check_neighbors: usize,
    /// Candidates kept from one generation reply.
    pub max_rules_per_generation: usize,
    /// Include worked examples from past samples in answer prompts.
    pub few_shot: bool,
    pub few_shot_n: usize,
    /// When false the engine only answers: no rule use, admission or
    /// mistake recording.
    pub rule_updates_enabled: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            k_rules: 3,
            capacity: DEFAULT_CAPACITY,
            m_mistakes: 3,
            n_check_neighbors: 3,
            max_rules_per_generation: 8,
            few_shot: false,
            few_shot_n: 4,
            rule_updates_enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateFate {
    /// Fixed the mistake on its own and was admitted.
    Admitted,
    /// Did not fix the mistake.
    Ineffective,
    /// Exact duplicate of a rule already held.
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAudit {
    pub text: String,
    pub origin: RuleOrigin,
    pub fate: CandidateFate,
    pub rule_id: Option<RuleId>,
    /// Answer given when the candidate alone was in the prompt.
    pub validation_answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalAudit {
    pub rule_id: RuleId,
    pub reason: RemovalReason,
}

/// Everything that happened while processing one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step: Step,
    pub sample_id: String,
    pub gold_label: String,
    pub answer: ParsedAnswer,
    pub correct: bool,
    pub retrieved_rule_ids: Vec<RuleId>,
    pub candidates: Vec<CandidateAudit>,
    pub removed: Vec<RemovalAudit>,
    pub evicted: Vec<RuleId>,
    /// The mistake went to the mistake collection (no effective rule).
    pub mistake_recorded: bool,
    pub summarized: bool,
    pub rules_after: usize,
    pub requests: usize,
}

impl StepOutcome {
    pub fn admitted(&self) -> impl Iterator<Item = RuleId> + '_ {
        self.candidates
            .iter()
            .filter(|c| c.fate == CandidateFate::Admitted)
            .filter_map(|c| c.rule_id)
    }
}

/// Mutable state of one step, committed on success.
struct Working {
    rules: RuleCollection,
    mistakes: MistakeCollection,
    outcome: StepOutcome,
}

pub struct Engine<'g> {
    spec: TaskSpec,
    config: EngineConfig,
    gateway: &'g Gateway,
    rules: RuleCollection,
    mistakes: MistakeCollection,
    history: Vec<Sample>,
    step: Step,
}

impl<'g> Engine<'g> {
    pub fn new(spec: TaskSpec, config: EngineConfig, gateway: &'g Gateway) -> Result<Self, EngineError> {
        let rules = RuleCollection::new(config.capacity)?;
        Ok(Self {
            spec,
            config,
            gateway,
            rules,
            mistakes: MistakeCollection::new(),
            history: Vec::new(),
            step: 0,
        })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn rules(&self) -> &RuleCollection {
        &self.rules
    }

    pub fn mistakes(&self) -> &MistakeCollection {
        &self.mistakes
    }

    /// Steps processed so far.
    pub fn step(&self) -> Step {
        self.step
    }

    pub fn set_rule_updates(&mut self, enabled: bool) {
        self.config.rule_updates_enabled = enabled;
    }

    /// Replaces the rule collection (e.g. with a loaded snapshot).
    pub fn set_rules(&mut self, rules: RuleCollection) {
        self.rules = rules;
    }

    /// Admits externally supplied rules before the first step. Exact
    /// duplicates are skipped; returns the ids admitted.
    pub fn preload<S: AsRef<str>>(&mut self, texts: &[S]) -> Result<Vec<RuleId>, EngineError> {
        let mut ids = Vec::new();
        for text in texts {
            if self.rules.find_exact(text.as_ref()).is_some() {
                continue;
            }
            let admission = self
                .rules
                .admit(text.as_ref(), RuleOrigin::Preloaded, Vec::new(), self.rules.clock())?;
            ids.push(admission.id);
        }
        Ok(ids)
    }

    /// Worked examples for the answer prompt; empty unless few-shot is on.
    pub fn select_examples(&self, sample: &Sample) -> Vec<&Sample> {
        if !self.config.few_shot {
            return Vec::new();
        }
        self.similar_past_samples(sample, self.config.few_shot_n)
    }

    /// Up to `n` (capped by the task's limit) past samples most similar to
    /// `sample`, most similar first.
    pub fn similar_past_samples(&self, sample: &Sample, n: usize) -> Vec<&Sample> {
        if self.history.is_empty() {
            return Vec::new();
        }
        let n = n.min(self.spec.few_shot_n);
        let corpus = Corpus::from_texts(
            self.history
                .iter()
                .enumerate()
                .map(|(i, s)| (i, self.spec.query_text(s)))
                .collect::<Vec<_>>()
                .iter()
                .map(|(i, t)| (*i, t.as_str())),
        );
        corpus
            .top_k(&self.spec.query_text(sample), n)
            .into_iter()
            .map(|s| &self.history[s.id])
            .collect()
    }

    fn prompt_with(&self, sample: &Sample, examples: &[&Sample], rules: &[&Rule]) -> Result<Prompt, TemplateError> {
        let pairs: Vec<(&Sample, &str)> = examples.iter().map(|s| (*s, s.gold_label.as_str())).collect();
        render_few_shot(&self.spec, sample, &pairs, rules)
    }

    fn ask(&self, prompt: &Prompt, sample: &Sample, requests: &mut usize) -> Result<ParsedAnswer, EngineError> {
        *requests += 1;
        let reply = self.gateway.complete(prompt.messages())?;
        Ok(parse_answer(&self.spec, sample, &reply))
    }

    /// Processes one sample: answer, then learn from a mistake.
    pub fn process_sample(&mut self, sample: &Sample) -> Result<StepOutcome, EngineError> {
        self.spec
            .check_sample(sample)
            .map_err(|reason| EngineError::InvalidSample {
                id: sample.id.clone(),
                reason,
            })?;
        let step = self.step + 1;
        let query = self.spec.query_text(sample);
        let examples = self.select_examples(sample);
        let retrieved = retrieve_rules(&self.rules, &query, self.config.k_rules);
        let prompt = self.prompt_with(sample, &examples, &retrieved)?;
        let mut requests = 0;
        let answer = self.ask(&prompt, sample, &mut requests)?;
        let correct = answer.label == sample.gold_label;
        debug!(step, sample = %sample.id, answer = %answer.label, correct, "answered");

        let mut work = Working {
            rules: self.rules.clone(),
            mistakes: self.mistakes.clone(),
            outcome: StepOutcome {
                step,
                sample_id: sample.id.clone(),
                gold_label: sample.gold_label.clone(),
                answer,
                correct,
                retrieved_rule_ids: retrieved.iter().map(|r| r.id).collect(),
                candidates: Vec::new(),
                removed: Vec::new(),
                evicted: Vec::new(),
                mistake_recorded: false,
                summarized: false,
                rules_after: 0,
                requests: 0,
            },
        };

        if self.config.rule_updates_enabled {
            let ids = work.outcome.retrieved_rule_ids.clone();
            work.rules.touch(&ids, step)?;
            if !correct {
                self.learn(&mut work, sample, &examples, prompt, &query, &mut requests)?;
            }
        }

        work.outcome.rules_after = work.rules.len();
        work.outcome.requests = requests;
        if self.config.rule_updates_enabled {
            self.rules = work.rules;
            self.mistakes = work.mistakes;
            self.history.push(sample.clone());
        }
        self.step = step;
        Ok(work.outcome)
    }

    fn learn(
        &self,
        work: &mut Working,
        sample: &Sample,
        examples: &[&Sample],
        prompt: Prompt,
        query: &str,
        requests: &mut usize,
    ) -> Result<(), EngineError> {
        let step = work.outcome.step;
        let gold = sample.gold_label.as_str();

        // The dialogue continues the failed exchange.
        let mut seed = prompt.messages();
        seed.push(ChatMessage::assistant(work.outcome.answer.raw.clone()));
        let turns = build_generating_dialogue(gold);
        *requests += turns.len();
        let replies = self.gateway.run_dialogue(seed, &turns)?;
        let mut candidates = parse_rules(replies.last().map(String::as_str).unwrap_or(""));
        candidates.truncate(self.config.max_rules_per_generation);

        let mut effective = Vec::new();
        for text in candidates {
            if work.rules.find_exact(&text).is_some() {
                work.outcome.candidates.push(CandidateAudit {
                    text,
                    origin: RuleOrigin::SingleMistake,
                    fate: CandidateFate::Duplicate,
                    rule_id: None,
                    validation_answer: None,
                });
                continue;
            }
            let probe = Rule {
                id: 0,
                text: text.clone(),
                created_step: step,
                last_used_step: step,
                use_count: 0,
                origin: RuleOrigin::SingleMistake,
                origin_sample_ids: Vec::new(),
            };
            let check = self.prompt_with(sample, examples, &[&probe])?;
            let verdict = self.ask(&check, sample, requests)?;
            let fixes = verdict.label == gold;
            work.outcome.candidates.push(CandidateAudit {
                text: text.clone(),
                origin: RuleOrigin::SingleMistake,
                fate: if fixes { CandidateFate::Admitted } else { CandidateFate::Ineffective },
                rule_id: None,
                validation_answer: Some(verdict.label),
            });
            if fixes {
                effective.push((work.outcome.candidates.len() - 1, text));
            }
        }

        if !effective.is_empty() {
            for (idx, text) in effective {
                let id = self.maintain_and_admit(work, &text, RuleOrigin::SingleMistake, vec![sample.id.clone()], requests)?;
                let audit = &mut work.outcome.candidates[idx];
                match id {
                    Some(id) => audit.rule_id = Some(id),
                    None => audit.fate = CandidateFate::Duplicate,
                }
            }
            return Ok(());
        }

        work.mistakes
            .record(sample.clone(), work.outcome.answer.raw.clone(), step, query)?;
        work.outcome.mistake_recorded = true;
        let similar: Vec<(Sample, String)> = retrieve_mistakes(&work.mistakes, query, self.config.m_mistakes, Some(step))
            .into_iter()
            .map(|e| (e.sample.clone(), e.sample.gold_label.clone()))
            .collect();
        if similar.is_empty() {
            return Ok(());
        }
        let pairs: Vec<(&Sample, &str)> = similar.iter().map(|(s, g)| (s, g.as_str())).collect();
        let text = build_summarizing_prompt(&self.spec, &pairs, (sample, gold))?;
        *requests += 1;
        let reply = self.gateway.complete(vec![ChatMessage::user(text)])?;
        work.outcome.summarized = true;
        let mut summarized = parse_rules(&reply);
        summarized.truncate(self.config.max_rules_per_generation);
        let mut origin_ids = vec![sample.id.clone()];
        origin_ids.extend(similar.iter().map(|(s, _)| s.id.clone()));
        for text in summarized {
            let id = self.maintain_and_admit(work, &text, RuleOrigin::Summarized, origin_ids.clone(), requests)?;
            work.outcome.candidates.push(CandidateAudit {
                text,
                origin: RuleOrigin::Summarized,
                fate: if id.is_some() { CandidateFate::Admitted } else { CandidateFate::Duplicate },
                rule_id: id,
                validation_answer: None,
            });
        }
        Ok(())
    }

    /// Removes neighbors judged identical or contradictory to `text`, then
    /// admits it. Returns `None` for an exact duplicate.
    fn maintain_and_admit(
        &self,
        work: &mut Working,
        text: &str,
        origin: RuleOrigin,
        origin_sample_ids: Vec<String>,
        requests: &mut usize,
    ) -> Result<Option<RuleId>, EngineError> {
        if work.rules.find_exact(text).is_some() {
            return Ok(None);
        }
        let step = work.outcome.step;
        let neighbors: Vec<(RuleId, String)> = retrieve_rules(&work.rules, text, self.config.n_check_neighbors)
            .into_iter()
            .map(|r| (r.id, r.text.clone()))
            .collect();
        let mut identical = Vec::new();
        let mut contradictory = Vec::new();
        for (id, existing) in &neighbors {
            *requests += 1;
            let reply = self
                .gateway
                .complete(vec![ChatMessage::user(build_checking_prompt(existing, text, CheckMode::Identical))])?;
            if parse_check_verdict(&reply, CheckMode::Identical).is_positive() {
                identical.push(*id);
                continue;
            }
            *requests += 1;
            let reply = self.gateway.complete(vec![ChatMessage::user(build_checking_prompt(
                existing,
                text,
                CheckMode::Contradictory,
            ))])?;
            if parse_check_verdict(&reply, CheckMode::Contradictory).is_positive() {
                contradictory.push(*id);
            }
        }
        for (ids, reason) in [
            (identical, RemovalReason::SupersededIdentical),
            (contradictory, RemovalReason::SupersededContradictory),
        ] {
            for removed in work.rules.remove(&ids, reason, step)? {
                work.outcome.removed.push(RemovalAudit {
                    rule_id: removed.id,
                    reason,
                });
            }
        }
        let admission = work.rules.admit(text, origin, origin_sample_ids, step)?;
        work.outcome.evicted.extend(admission.evicted.iter().map(|r| r.id));
        info!(step, rule = admission.id, %text, "admitted rule");
        Ok(Some(admission.id))
    }
}
