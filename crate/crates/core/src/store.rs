//! Domain types and the two knowledge stores: the bounded rule collection
//! and the append-only mistake collection.
//!
//! The rule collection is an LRU-bounded set. "Used" means a rule was selected
//! into the retrieved set for an input; [`RuleCollection::touch`] records that.
//! Eviction is eager: after [`RuleCollection::admit`] returns, the collection
//! never holds more than `capacity` rules. The victim is the rule with the
//! smallest `(last_used_step, created_step, id)` triple.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Logical step index. Step 0 is reserved for preloaded rules.
pub type Step = u64;
pub type RuleId = u64;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("rule text is not of the form \"If ..., then ...\": {0:?}")]
    ShapeViolation(String),
    #[error("rule text duplicates existing rule {existing}")]
    Duplicate { existing: RuleId },
    #[error("unknown rule id {0}")]
    NotFound(RuleId),
    #[error("step {step} precedes collection clock {clock}")]
    StaleStep { step: Step, clock: Step },
    #[error("mistake at step {step} precedes last recorded step {last}")]
    StepRegression { step: Step, last: Step },
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error("snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A field value of a sample: a single text segment or an ordered list
/// (multiple-choice answers).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Text(String),
    List(Vec<String>),
}

impl FieldValue {
    pub fn is_empty(&self) -> bool {
        match self {
            FieldValue::Text(s) => s.trim().is_empty(),
            FieldValue::List(items) => items.is_empty(),
        }
    }

    /// All text held by the value, list items joined by newlines.
    pub fn joined(&self) -> String {
        match self {
            FieldValue::Text(s) => s.clone(),
            FieldValue::List(items) => items.join("\n"),
        }
    }
}

impl From<&str> for FieldValue {
    fn from(s: &str) -> Self {
        FieldValue::Text(s.to_string())
    }
}

impl From<String> for FieldValue {
    fn from(s: String) -> Self {
        FieldValue::Text(s)
    }
}

impl From<Vec<String>> for FieldValue {
    fn from(items: Vec<String>) -> Self {
        FieldValue::List(items)
    }
}

/// One element of the input stream: the task input and its gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub task_id: String,
    pub fields: BTreeMap<String, FieldValue>,
    pub gold_label: String,
}

impl Sample {
    pub fn new(id: impl Into<String>, task_id: impl Into<String>, gold_label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            task_id: task_id.into(),
            fields: BTreeMap::new(),
            gold_label: gold_label.into(),
        }
    }

    pub fn with_field(mut self, name: impl Into<String>, value: impl Into<FieldValue>) -> Self {
        self.fields.insert(name.into(), value.into());
        self
    }

    pub fn field(&self, name: &str) -> Option<&FieldValue> {
        self.fields.get(name)
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        match self.fields.get(name) {
            Some(FieldValue::Text(s)) => Some(s),
            _ => None,
        }
    }

    pub fn list(&self, name: &str) -> Option<&[String]> {
        match self.fields.get(name) {
            Some(FieldValue::List(items)) => Some(items),
            _ => None,
        }
    }
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_rule_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when the normalized text starts with the word "if" and contains the
/// word "then" somewhere after it (case-insensitive).
pub fn is_rule_shaped(text: &str) -> bool {
    let lower = normalize_rule_text(text).to_lowercase();
    let mut words = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty());
    if !lower.starts_with("if") || words.next() != Some("if") {
        return false;
    }
    words.any(|w| w == "then")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleOrigin {
    SingleMistake,
    Summarized,
    Preloaded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub id: RuleId,
    pub text: String,
    pub created_step: Step,
    pub last_used_step: Step,
    pub use_count: u64,
    pub origin: RuleOrigin,
    pub origin_sample_ids: Vec<String>,
}

impl Rule {
    fn lru_key(&self) -> (Step, Step, RuleId) {
        (self.last_used_step, self.created_step, self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    SupersededIdentical,
    SupersededContradictory,
    Evicted,
}

impl fmt::Display for RemovalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RemovalReason::SupersededIdentical => "superseded-identical",
            RemovalReason::SupersededContradictory => "superseded-contradictory",
            RemovalReason::Evicted => "evicted",
        })
    }
}

/// Audit record for a rule entering or leaving the collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LifecycleEvent {
    Admitted {
        step: Step,
        rule_id: RuleId,
        origin: RuleOrigin,
        text: String,
    },
    Removed {
        step: Step,
        rule_id: RuleId,
        reason: RemovalReason,
    },
}

/// Result of a successful admission.
#[derive(Debug, Clone)]
pub struct Admission {
    pub id: RuleId,
    pub evicted: Vec<Rule>,
}

/// Bounded, LRU-evicting rule store.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleCollection {
    rules: BTreeMap<RuleId, Rule>,
    capacity: usize,
    clock: Step,
    next_id: RuleId,
    events: Vec<LifecycleEvent>,
}

pub const DEFAULT_CAPACITY: usize = 100;

impl Default for RuleCollection {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY).expect("default capacity is positive")
    }
}

impl RuleCollection {
    pub fn new(capacity: usize) -> Result<Self, StoreError> {
        if capacity == 0 {
            return Err(StoreError::ZeroCapacity);
        }
        Ok(Self {
            rules: BTreeMap::new(),
            capacity,
            clock: 0,
            next_id: 1,
            events: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clock(&self) -> Step {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: RuleId) -> Option<&Rule> {
        self.rules.get(&id)
    }

    /// Rules in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Rule> {
        self.rules.values()
    }

    /// Lifecycle events recorded since the last call to `take_events`.
    pub fn events(&self) -> &[LifecycleEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<LifecycleEvent> {
        std::mem::take(&mut self.events)
    }

    /// Id of the rule whose normalized text equals `text`'s normalized form.
    pub fn find_exact(&self, text: &str) -> Option<RuleId> {
        let normalized = normalize_rule_text(text);
        self.rules
            .values()
            .find(|r| normalize_rule_text(&r.text) == normalized)
            .map(|r| r.id)
    }

    /// Inserts a new rule created at `step`, then evicts least recently used
    /// rules (never the one just admitted) until the capacity bound holds.
    pub fn admit(
        &mut self,
        text: &str,
        origin: RuleOrigin,
        origin_sample_ids: Vec<String>,
        step: Step,
    ) -> Result<Admission, StoreError> {
        let text = normalize_rule_text(text);
        if !is_rule_shaped(&text) {
            return Err(StoreError::ShapeViolation(text));
        }
        if let Some(existing) = self.find_exact(&text) {
            return Err(StoreError::Duplicate { existing });
        }
        let id = self.next_id;
        self.next_id += 1;
        self.clock = self.clock.max(step);
        self.events.push(LifecycleEvent::Admitted {
            step,
            rule_id: id,
            origin,
            text: text.clone(),
        });
        self.rules.insert(
            id,
            Rule {
                id,
                text,
                created_step: step,
                last_used_step: step,
                use_count: 0,
                origin,
                origin_sample_ids,
            },
        );

        let mut evicted = Vec::new();
        while self.rules.len() > self.capacity {
            let victim = self
                .rules
                .values()
                .filter(|r| r.id != id)
                .min_by_key(|r| r.lru_key())
                .map(|r| r.id)
                .expect("collection over capacity holds another rule");
            let rule = self.rules.remove(&victim).expect("victim present");
            self.events.push(LifecycleEvent::Removed {
                step,
                rule_id: victim,
                reason: RemovalReason::Evicted,
            });
            evicted.push(rule);
        }
        Ok(Admission { id, evicted })
    }

    /// Marks the rules as used at `step`. Validates every id before mutating.
    pub fn touch(&mut self, rule_ids: &[RuleId], step: Step) -> Result<(), StoreError> {
        if step < self.clock {
            return Err(StoreError::StaleStep {
                step,
                clock: self.clock,
            });
        }
        if let Some(&missing) = rule_ids.iter().find(|id| !self.rules.contains_key(id)) {
            return Err(StoreError::NotFound(missing));
        }
        for id in rule_ids {
            let rule = self.rules.get_mut(id).expect("checked above");
            rule.last_used_step = step;
            rule.use_count += 1;
        }
        self.clock = step;
        Ok(())
    }

    /// Removes the rules, recording `reason` in the audit log.
    pub fn remove(
        &mut self,
        rule_ids: &[RuleId],
        reason: RemovalReason,
        step: Step,
    ) -> Result<Vec<Rule>, StoreError> {
        if let Some(&missing) = rule_ids.iter().find(|id| !self.rules.contains_key(id)) {
            return Err(StoreError::NotFound(missing));
        }
        let mut removed = Vec::with_capacity(rule_ids.len());
        for id in rule_ids {
            // Repeated ids in one call are tolerated.
            if let Some(rule) = self.rules.remove(id) {
                self.events.push(LifecycleEvent::Removed {
                    step,
                    rule_id: *id,
                    reason,
                });
                removed.push(rule);
            }
        }
        Ok(removed)
    }

    /// Writes one JSON record per rule, ascending id order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), StoreError> {
        for rule in self.rules.values() {
            serde_json::to_writer(&mut out, rule).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_jsonl(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Loads a snapshot, failing on the first invariant violation.
    pub fn read_jsonl<R: BufRead>(input: R, capacity: usize) -> Result<Self, StoreError> {
        let mut collection = Self::new(capacity)?;
        let mut seen_text: BTreeMap<String, RuleId> = BTreeMap::new();
        for (idx, line) in input.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| StoreError::Snapshot {
                line: line_no,
                reason,
            };
            let rule: Rule = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            if !is_rule_shaped(&rule.text) {
                return Err(bad(format!("rule {} is not if/then shaped", rule.id)));
            }
            if rule.text != normalize_rule_text(&rule.text) {
                return Err(bad(format!("rule {} text is not normalized", rule.id)));
            }
            if rule.last_used_step < rule.created_step {
                return Err(bad(format!("rule {} last used before creation", rule.id)));
            }
            if collection.rules.contains_key(&rule.id) {
                return Err(bad(format!("duplicate rule id {}", rule.id)));
            }
            if let Some(other) = seen_text.insert(rule.text.clone(), rule.id) {
                return Err(bad(format!("rule {} duplicates rule {other}", rule.id)));
            }
            collection.clock = collection.clock.max(rule.last_used_step);
            collection.next_id = collection.next_id.max(rule.id + 1);
            collection.rules.insert(rule.id, rule);
            if collection.rules.len() > capacity {
                return Err(bad(format!("more than {capacity} rules")));
            }
        }
        Ok(collection)
    }

    pub fn load(path: &Path, capacity: usize) -> Result<Self, StoreError> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file), capacity)
    }
}

/// One failed mistake: the sample, what the model said, and the retrieval
/// document (the rendered input text).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MistakeEntry {
    pub sample: Sample,
    pub model_answer: String,
    pub step: Step,
    pub document: String,
}

/// Append-only store of failed mistakes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MistakeCollection {
    entries: Vec<MistakeEntry>,
}

impl MistakeCollection {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &mut self,
        sample: Sample,
        model_answer: impl Into<String>,
        step: Step,
        document: impl Into<String>,
    ) -> Result<(), StoreError> {
        if let Some(last) = self.entries.last() {
            if step < last.step {
                return Err(StoreError::StepRegression {
                    step,
                    last: last.step,
                });
            }
        }
        self.entries.push(MistakeEntry {
            sample,
            model_answer: model_answer.into(),
            step,
            document: document.into(),
        });
        Ok(())
    }

    pub fn entries(&self) -> &[MistakeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
