//! Prompt rendering for every prompt family, and parsers for model replies.
//!
//! A rendered prompt is a system message carrying the task description and a
//! user message carrying rules, worked examples and the query sample, in that
//! order, ending with the task's answer cue.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::ChatMessage;
use crate::store::{is_rule_shaped, normalize_rule_text, FieldValue, Rule, Sample};
use crate::task::{substitute, TaskKind, TaskSpec};

pub const RULES_HEADER: &str = "Given the following rules:";
pub const REASONING_PREAMBLE: &str = "Let's think step by step.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("sample {sample}: missing field {field:?}")]
    MissingField { sample: String, field: String },
    #[error("sample {sample}: field {field:?}: {reason}")]
    BadField {
        sample: String,
        field: String,
        reason: String,
    },
    #[error("{given} examples exceed the limit of {limit}")]
    TooManyExamples { given: usize, limit: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![ChatMessage::system(self.system.clone()), ChatMessage::user(self.user.clone())]
    }

    /// The whole prompt as one block of text.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }

    /// Appends the zero-shot chain-of-thought trigger after the answer cue.
    pub fn with_reasoning_preamble(mut self) -> Self {
        self.user.push(' ');
        self.user.push_str(REASONING_PREAMBLE);
        self
    }
}

/// Collapses whitespace runs; used for golden comparisons.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The sample's fields in layout order, one line per field (or list item).
pub fn render_sample_block(spec: &TaskSpec, sample: &Sample) -> Result<String, TemplateError> {
    let mut lines = Vec::new();
    for field in &spec.fields {
        let value = match sample.field(&field.name) {
            Some(v) if field.optional && v.is_empty() => continue,
            Some(v) => v,
            None if field.optional => continue,
            None => {
                return Err(TemplateError::MissingField {
                    sample: sample.id.clone(),
                    field: field.name.clone(),
                })
            }
        };
        let bad = |reason: String| TemplateError::BadField {
            sample: sample.id.clone(),
            field: field.name.clone(),
            reason,
        };
        match (value, field.list) {
            (FieldValue::List(items), true) => {
                for (i, item) in items.iter().enumerate() {
                    let n = (i + 1).to_string();
                    let line = substitute(&field.template, |name| match name {
                        "n" => Some(n.clone()),
                        "item" => Some(item.clone()),
                        _ => None,
                    })
                    .map_err(bad)?;
                    lines.push(line);
                }
            }
            (FieldValue::Text(_), false) => {
                let line = substitute(&field.template, |name| sample.field(name).map(FieldValue::joined)).map_err(bad)?;
                lines.push(line);
            }
            (FieldValue::List(_), false) => return Err(bad("expected text, found list".into())),
            (FieldValue::Text(_), true) => return Err(bad("expected list, found text".into())),
        }
    }
    Ok(lines.join("\n"))
}

/// A worked example: the sample block followed by the cue and its gold answer.
pub fn render_example(spec: &TaskSpec, sample: &Sample, gold: &str) -> Result<String, TemplateError> {
    Ok(format!("{}\n{} {}", render_sample_block(spec, sample)?, spec.answer_cue, gold))
}

fn render_query(spec: &TaskSpec, sample: &Sample) -> Result<String, TemplateError> {
    Ok(format!("{}\n{}", render_sample_block(spec, sample)?, spec.answer_cue))
}

/// Header plus one double-quoted rule per line.
pub fn render_rules_block(rules: &[&Rule]) -> String {
    let mut out = String::from(RULES_HEADER);
    for rule in rules {
        out.push_str("\n\"");
        out.push_str(&rule.text);
        out.push('"');
    }
    out
}

pub fn render_basic(spec: &TaskSpec, sample: &Sample) -> Result<Prompt, TemplateError> {
    render_few_shot(spec, sample, &[], &[])
}

/// Basic prompt preceded by the rules block. Falls back to the basic prompt
/// when `rules` is empty.
pub fn render_rule_based(spec: &TaskSpec, sample: &Sample, rules: &[&Rule]) -> Result<Prompt, TemplateError> {
    render_few_shot(spec, sample, &[], rules)
}

/// Rules (if any), then worked examples in the given order, then the query.
pub fn render_few_shot(
    spec: &TaskSpec,
    sample: &Sample,
    examples: &[(&Sample, &str)],
    rules: &[&Rule],
) -> Result<Prompt, TemplateError> {
    if examples.len() > spec.few_shot_n {
        return Err(TemplateError::TooManyExamples {
            given: examples.len(),
            limit: spec.few_shot_n,
        });
    }
    let mut blocks = Vec::with_capacity(examples.len() + 2);
    if !rules.is_empty() {
        blocks.push(render_rules_block(rules));
    }
    for (example, gold) in examples {
        blocks.push(render_example(spec, example, gold)?);
    }
    blocks.push(render_query(spec, sample)?);
    Ok(Prompt {
        system: spec.description_prompt.clone(),
        user: blocks.join("\n\n"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMethod {
    Exact,
    IndexDigit,
    AnswerTextMatch,
    LabelSubstring,
    Unparsed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    /// Canonical label; empty when unparsed.
    pub label: String,
    pub raw: String,
    pub method: ParseMethod,
}

impl ParsedAnswer {
    pub fn is_parsed(&self) -> bool {
        self.method != ParseMethod::Unparsed
    }
}

fn strip_decoration(text: &str) -> &str {
    text.trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*' | '“' | '”'))
        .trim_end_matches(['.', '!', ','])
        .trim()
}

/// Leading "Answer k" or bare leading number.
fn leading_index(text: &str) -> Option<usize> {
    let lower = text.trim_start_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    let rest = lower.strip_prefix("answer").map(str::trim_start).unwrap_or(&lower);
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    if digits.is_empty() {
        return None;
    }
    // "12abc" is not an index.
    if rest[digits.len()..].chars().next().is_some_and(char::is_alphanumeric) {
        return None;
    }
    digits.parse().ok()
}

/// Maps a free-form reply onto the label space. Cascade: exact label, leading
/// choice index, longest answer-text match (multi-choice), earliest label
/// substring; otherwise unparsed.
pub fn parse_answer(spec: &TaskSpec, sample: &Sample, response: &str) -> ParsedAnswer {
    let done = |label: &str, method| ParsedAnswer {
        label: label.to_string(),
        raw: response.to_string(),
        method,
    };
    let cleaned = strip_decoration(response);
    if let Some(label) = spec.label_space.iter().find(|l| l.eq_ignore_ascii_case(cleaned)) {
        return done(label, ParseMethod::Exact);
    }

    let lower = response.to_lowercase();
    if spec.kind == TaskKind::MultiChoice {
        let choices = spec.choices(sample);
        if let Some(k) = leading_index(response) {
            if (1..=choices.len().min(spec.label_space.len())).contains(&k) {
                return done(&spec.label_space[k - 1], ParseMethod::IndexDigit);
            }
        }
        let best = choices
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.trim().is_empty() && lower.contains(&c.trim().to_lowercase()))
            .max_by(|(ia, a), (ib, b)| a.trim().len().cmp(&b.trim().len()).then(ib.cmp(ia)));
        if let Some((i, _)) = best {
            if let Some(label) = spec.label_space.get(i) {
                return done(label, ParseMethod::AnswerTextMatch);
            }
        }
    }

    let best = spec
        .label_space
        .iter()
        .filter_map(|l| lower.find(&l.to_lowercase()).map(|pos| (pos, l)))
        .min_by(|(pa, a), (pb, b)| pa.cmp(pb).then(b.len().cmp(&a.len())));
    if let Some((_, label)) = best {
        return done(label, ParseMethod::LabelSubstring);
    }
    done("", ParseMethod::Unparsed)
}

fn strip_rule_prefix(line: &str) -> &str {
    let mut s = line.trim();
    s = s.trim_start_matches(['-', '*', '•', '–', '>']).trim_start();
    // Markdown emphasis around a "Rule k:" label.
    s = s.trim_start_matches("**");
    let lower = s.to_lowercase();
    if lower.starts_with("rule") {
        let rest = &s[4..];
        let digits = rest.trim_start().chars().take_while(char::is_ascii_digit).count();
        if digits > 0 {
            let after = rest.trim_start()[digits..].trim_start();
            if let Some(body) = after.strip_prefix(':').or_else(|| after.strip_prefix('.')) {
                s = body.trim_start().trim_start_matches("**").trim_start();
            }
        }
    } else {
        let digits = s.chars().take_while(char::is_ascii_digit).count();
        if digits > 0 {
            let after = &s[digits..];
            if let Some(body) = after.strip_prefix('.').or_else(|| after.strip_prefix(')')) {
                s = body.trim_start();
            }
        }
    }
    s
}

/// Extracts if/then rules from a reply, one per line, in order, without
/// numbering or quotes, deduplicated.
pub fn parse_rules(response: &str) -> Vec<String> {
    let mut rules: Vec<String> = Vec::new();
    for line in response.lines() {
        let body = strip_rule_prefix(line);
        let body = body
            .trim_matches(|c: char| matches!(c, '"' | '“' | '”' | '`' | '*'))
            .trim();
        if !is_rule_shaped(body) {
            continue;
        }
        let text = normalize_rule_text(body);
        if !rules.contains(&text) {
            rules.push(text);
        }
    }
    rules
}

/// Joins rules as "Rule k: <text>" lines.
pub fn format_rule_list(rules: &[String]) -> String {
    rules
        .iter()
        .enumerate()
        .map(|(i, r)| format!("Rule {}: {r}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    Identical,
    Contradictory,
}

impl CheckMode {
    fn word(self) -> &'static str {
        match self {
            CheckMode::Identical => "identical",
            CheckMode::Contradictory => "contradictory",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckVerdict {
    Identical,
    NotIdentical,
    Contradictory,
    NotContradictory,
}

impl CheckVerdict {
    pub fn is_positive(self) -> bool {
        matches!(self, CheckVerdict::Identical | CheckVerdict::Contradictory)
    }

    fn of(mode: CheckMode, positive: bool) -> Self {
        match (mode, positive) {
            (CheckMode::Identical, true) => CheckVerdict::Identical,
            (CheckMode::Identical, false) => CheckVerdict::NotIdentical,
            (CheckMode::Contradictory, true) => CheckVerdict::Contradictory,
            (CheckMode::Contradictory, false) => CheckVerdict::NotContradictory,
        }
    }
}

/// The first occurrence of the mode word decides; a preceding negation
/// ("not", "non-", "n't") makes it negative. No occurrence is negative.
pub fn parse_check_verdict(response: &str, mode: CheckMode) -> CheckVerdict {
    let lower = response.to_lowercase();
    let Some(pos) = lower.find(mode.word()) else {
        return CheckVerdict::of(mode, false);
    };
    let before = lower[..pos].trim_end().trim_end_matches('-').trim_end();
    let negated = ["not", "non", "n't"].iter().any(|neg| {
        before.ends_with(neg) && {
            let head = &before[..before.len() - neg.len()];
            *neg == "n't" || head.is_empty() || !head.chars().last().is_some_and(char::is_alphanumeric)
        }
    });
    CheckVerdict::of(mode, !negated)
}

/// The four user turns of the rule-generating dialogue.
pub fn build_generating_dialogue(gold: &str) -> Vec<String> {
    vec![
        format!("This correct answer is {gold}."),
        format!("Please give me the reasons for {gold} as the correct answer. List by points."),
        "Be precise and concise.".to_string(),
        "Please rewrite these reasons into rules for making judgments, using the format of \"if..., then...\". \
         Give it in sections. Each is an independent rule. Directly give the content of the rule. \
         Do not answer anything else."
            .to_string(),
    ]
}

/// Summarizing instruction, the retrieved past mistakes and the current
/// mistake, each with its correct answer.
pub fn build_summarizing_prompt(
    spec: &TaskSpec,
    mistakes: &[(&Sample, &str)],
    current: (&Sample, &str),
) -> Result<String, TemplateError> {
    let mut blocks = vec![spec.summarize_instruction.clone()];
    for (sample, gold) in mistakes {
        blocks.push(render_example(spec, sample, gold)?);
    }
    blocks.push(render_example(spec, current.0, current.1)?);
    Ok(blocks.join("\n\n"))
}

pub fn build_checking_prompt(rule_a: &str, rule_b: &str, mode: CheckMode) -> String {
    let word = mode.word();
    format!(
        "I will give you two rules. Please help me classify whether the contents of these two rules are {word}. \
         You are only allowed to give me the answer, selecting from \"{word}\" and \"not {word}\".\n\
         1. {rule_a}\n\
         2. {rule_b}"
    )
}
