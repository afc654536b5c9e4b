//! Per-dataset task specifications: prompt templates, field layout, label
//! space and answer cue. Specs are declared in TOML; the bundled set lives in
//! `tasks/default_tasks.toml`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{FieldValue, Sample};

const DEFAULT_TASKS: &str = include_str!("../tasks/default_tasks.toml");

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("task {task}: {reason}")]
    Invalid { task: String, reason: String },
    #[error("unknown task id {0:?}")]
    Unknown(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultiChoice,
    SingleLabel,
}

/// One line of the sample block. Text fields render `template` once with
/// `{<name>}` substituted. List fields render `template` once per item with
/// `{n}` (1-based) and `{item}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub template: String,
    #[serde(default)]
    pub list: bool,
    /// Optional fields that are absent or empty render no line at all.
    #[serde(default)]
    pub optional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub kind: TaskKind,
    pub description_prompt: String,
    pub fields: Vec<FieldSpec>,
    pub answer_cue: String,
    /// Canonical labels. Multi-choice tasks use "Answer 1".."Answer n".
    pub label_space: Vec<String>,
    /// Name of the list field holding the answer texts (multi-choice only).
    #[serde(default)]
    pub choices_field: Option<String>,
    /// Label assigned by the counterfactual relabeling (single-label only).
    #[serde(default)]
    pub positive_label: Option<String>,
    #[serde(default = "default_few_shot_n")]
    pub few_shot_n: usize,
    pub summarize_instruction: String,
}

fn default_few_shot_n() -> usize {
    4
}

#[derive(Debug, Deserialize)]
struct TaskFile {
    #[serde(default)]
    task: Vec<TaskEntry>,
}

#[derive(Debug, Deserialize)]
struct TaskEntry {
    #[serde(flatten)]
    spec: TaskSpec,
    #[serde(default)]
    aliases: Vec<String>,
}

/// Splits a template into literal and placeholder segments. `{{`/`}}` escape
/// literal braces.
pub(crate) fn placeholders(template: &str) -> Result<Vec<String>, String> {
    let mut names = Vec::new();
    let mut chars = template.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) if ch.is_alphanumeric() || ch == '_' => name.push(ch),
                        _ => return Err(format!("malformed placeholder in {template:?}")),
                    }
                }
                names.push(name);
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
            }
            '}' => return Err(format!("unbalanced '}}' in {template:?}")),
            _ => {}
        }
    }
    Ok(names)
}

/// Single-pass substitution. Values are inserted verbatim, so braces inside
/// them are never re-expanded.
pub(crate) fn substitute(template: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, String> {
    let mut out = String::with_capacity(template.len());
    let mut chars = template.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                out.push('{');
            }
            '{' => {
                let mut name = String::new();
                for ch in chars.by_ref() {
                    if ch == '}' {
                        break;
                    }
                    name.push(ch);
                }
                let value = lookup(&name).ok_or_else(|| format!("missing value for {{{name}}}"))?;
                out.push_str(&value);
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                out.push('}');
            }
            _ => out.push(c),
        }
    }
    Ok(out)
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), TaskError> {
        let invalid = |reason: String| TaskError::Invalid {
            task: self.task_id.clone(),
            reason,
        };
        if self.label_space.is_empty() {
            return Err(invalid("label space is empty".into()));
        }
        if self.fields.is_empty() {
            return Err(invalid("no fields declared".into()));
        }
        let declared: Vec<&str> = self.fields.iter().map(|f| f.name.as_str()).collect();
        for field in &self.fields {
            let names = placeholders(&field.template).map_err(invalid)?;
            for name in names {
                let allowed = if field.list {
                    name == "n" || name == "item"
                } else {
                    declared.contains(&name.as_str())
                };
                if !allowed {
                    return Err(invalid(format!(
                        "placeholder {{{name}}} in field {} is not declared",
                        field.name
                    )));
                }
            }
        }
        for (what, text) in [
            ("description", &self.description_prompt),
            ("summarize instruction", &self.summarize_instruction),
        ] {
            if !placeholders(text).map_err(invalid)?.is_empty() {
                return Err(invalid(format!("{what} must not contain placeholders")));
            }
        }
        match self.kind {
            TaskKind::MultiChoice => {
                let choices = self
                    .choices_field
                    .as_deref()
                    .ok_or_else(|| invalid("multi-choice task needs choices_field".into()))?;
                if !self.fields.iter().any(|f| f.name == choices && f.list) {
                    return Err(invalid(format!("choices field {choices} must be a list field")));
                }
            }
            TaskKind::SingleLabel => {
                if let Some(pos) = &self.positive_label {
                    if !self.label_space.contains(pos) {
                        return Err(invalid(format!("positive label {pos:?} not in label space")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_label(&self, label: &str) -> bool {
        self.label_space.iter().any(|l| l == label)
    }

    /// Answer texts of a multi-choice sample, in choice order.
    pub fn choices<'a>(&self, sample: &'a Sample) -> &'a [String] {
        self.choices_field
            .as_deref()
            .and_then(|name| sample.list(name))
            .unwrap_or(&[])
    }

    /// Checks the sample against the layout and label space.
    pub fn check_sample(&self, sample: &Sample) -> Result<(), String> {
        for field in &self.fields {
            match sample.field(&field.name) {
                None if field.optional => {}
                None => return Err(format!("missing field {:?}", field.name)),
                Some(FieldValue::List(_)) if !field.list => {
                    return Err(format!("field {:?} must be text", field.name))
                }
                Some(FieldValue::Text(_)) if field.list => {
                    return Err(format!("field {:?} must be a list", field.name))
                }
                Some(v) if v.is_empty() && !field.optional => {
                    return Err(format!("field {:?} is empty", field.name))
                }
                Some(_) => {}
            }
        }
        if !self.is_label(&sample.gold_label) {
            return Err(format!("gold label {:?} not in label space", sample.gold_label));
        }
        Ok(())
    }

    /// Retrieval query: every field in layout order, newline-joined.
    pub fn query_text(&self, sample: &Sample) -> String {
        self.fields
            .iter()
            .filter_map(|f| sample.field(&f.name))
            .map(FieldValue::joined)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A set of task specs keyed by id.
#[derive(Debug, Clone, Default)]
pub struct TaskRegistry {
    specs: BTreeMap<String, TaskSpec>,
}

impl TaskRegistry {
    pub fn from_toml(text: &str) -> Result<Self, TaskError> {
        let file: TaskFile = toml::from_str(text)?;
        let mut specs = BTreeMap::new();
        for entry in file.task {
            entry.spec.validate()?;
            for alias in &entry.aliases {
                let mut spec = entry.spec.clone();
                spec.task_id = alias.clone();
                specs.insert(alias.clone(), spec);
            }
            specs.insert(entry.spec.task_id.clone(), entry.spec);
        }
        Ok(Self { specs })
    }

    /// The bundled task specs.
    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_TASKS).expect("bundled task specs are valid")
    }

    pub fn load(path: &Path) -> Result<Self, TaskError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, task_id: &str) -> Result<&TaskSpec, TaskError> {
        self.specs
            .get(task_id)
            .ok_or_else(|| TaskError::Unknown(task_id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.specs.keys().map(String::as_str)
    }
}
