//! A simulated model for a closed world with known ground-truth rules.
//!
//! Each ground-truth rule owns a region of the input space (all inputs that
//! contain its triggers). The simulated model answers a sample in a region
//! correctly only when its prompt carries a rule that covers that region;
//! otherwise it answers the default label. When asked to explain a mistake or
//! summarize, it states the ground-truth rule of the sample's region.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, CompletionRequest, GatewayError, Role};
use crate::prompting::RULES_HEADER;
use crate::retrieval::tokenize;
use crate::store::normalize_rule_text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRule {
    /// An input is in the region when it contains every trigger. Alphanumeric
    /// triggers match whole tokens; others match as raw substrings.
    pub triggers: Vec<String>,
    /// Tokens a prompt rule must contain to cover the region. Defaults to the
    /// triggers plus the label.
    #[serde(default)]
    pub cover_tokens: Option<Vec<String>>,
    pub label: String,
    /// Rule text stated by the model. Defaults to a fixed template.
    #[serde(default)]
    pub text: Option<String>,
}

fn is_word(trigger: &str) -> bool {
    trigger.chars().all(char::is_alphanumeric)
}

fn contains_trigger(text: &str, tokens: &BTreeSet<String>, trigger: &str) -> bool {
    if is_word(trigger) {
        tokens.contains(&trigger.to_lowercase())
    } else {
        text.contains(trigger)
    }
}

impl GroundTruthRule {
    pub fn rule_text(&self) -> String {
        match &self.text {
            Some(t) => normalize_rule_text(t),
            None => format!(
                "If the input contains the tokens {}, then the label is {}.",
                self.triggers.join(" and "),
                self.label
            ),
        }
    }

    pub fn matches(&self, input: &str) -> bool {
        let tokens: BTreeSet<String> = tokenize(input).into_iter().collect();
        self.triggers.iter().all(|t| contains_trigger(input, &tokens, t))
    }

    /// Whether a stated rule is specific enough to fix this region.
    pub fn covered_by(&self, rule: &str) -> bool {
        let tokens: BTreeSet<String> = tokenize(rule).into_iter().collect();
        match &self.cover_tokens {
            Some(cover) => cover.iter().all(|t| contains_trigger(rule, &tokens, t)),
            None => {
                self.triggers.iter().all(|t| contains_trigger(rule, &tokens, t))
                    && tokenize(&self.label).iter().all(|t| tokens.contains(t))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleWorld {
    pub default_label: String,
    pub rules: Vec<GroundTruthRule>,
}

impl OracleWorld {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
    }

    /// The first rule whose region contains `input`.
    pub fn region(&self, input: &str) -> Option<&GroundTruthRule> {
        self.rules.iter().find(|r| r.matches(input))
    }

    pub fn gold(&self, input: &str) -> &str {
        self.region(input).map_or(&self.default_label, |r| &r.label)
    }

    /// The simulated model's answer given the rules shown in its prompt.
    pub fn answer(&self, input: &str, prompt_rules: &[String]) -> &str {
        match self.region(input) {
            Some(r) if prompt_rules.iter().any(|p| r.covered_by(p)) => &r.label,
            _ => &self.default_label,
        }
    }
}

/// Text of the last `Input: "..."` line.
fn last_input(text: &str) -> Option<&str> {
    text.lines().rev().find_map(|l| {
        l.trim()
            .strip_prefix("Input: \"")
            .map(|rest| rest.strip_suffix('"').unwrap_or(rest))
    })
}

/// Quoted rule lines that follow the rules header.
fn prompt_rules(text: &str) -> Vec<String> {
    let mut lines = text.lines();
    if !lines.any(|l| l.trim() == RULES_HEADER) {
        return Vec::new();
    }
    lines
        .map(str::trim)
        .take_while(|l| !l.is_empty())
        .map(|l| l.trim_matches('"').to_string())
        .collect()
}

/// Numbered operands of a checking prompt.
fn check_operands(text: &str) -> Option<(String, String)> {
    let a = text.lines().find_map(|l| l.strip_prefix("1. "))?;
    let b = text.lines().find_map(|l| l.strip_prefix("2. "))?;
    Some((normalize_rule_text(a), normalize_rule_text(b)))
}

pub struct OracleWorldBackend {
    world: OracleWorld,
}

impl OracleWorldBackend {
    pub fn new(world: OracleWorld) -> Self {
        Self { world }
    }

    pub fn world(&self) -> &OracleWorld {
        &self.world
    }

    fn state_rule(&self, input: Option<&str>) -> String {
        match input.and_then(|i| self.world.region(i)) {
            Some(r) => format!("Rule 1: {}", r.rule_text()),
            None => "There is no rule to give.".into(),
        }
    }
}

impl ChatBackend for OracleWorldBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let users: Vec<&str> = request
            .messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect();
        let Some(last) = users.last() else {
            return Err(GatewayError::InvalidRequest("no user message".into()));
        };

        if users.len() > 1 {
            // Rule-generating dialogue; the first user message is the failed prompt.
            return Ok(match users.len() - 1 {
                1 => "I apologize for the mistake.".into(),
                2 => "1. The input contains distinctive tokens.".into(),
                3 => "1. Distinctive tokens determine the label.".into(),
                _ => self.state_rule(last_input(users[0])),
            });
        }
        if last.starts_with("I will give you two rules.") {
            let same = check_operands(last).is_some_and(|(a, b)| a == b);
            return Ok(if last.contains("\"not identical\"") {
                if same { "Identical." } else { "Not identical." }
            } else {
                "Not contradictory."
            }
            .into());
        }
        if last.contains("summarize the rules") {
            return Ok(self.state_rule(last_input(last)));
        }
        match last_input(last) {
            Some(input) => Ok(self.world.answer(input, &prompt_rules(last)).to_string()),
            None => Ok(self.world.default_label.clone()),
        }
    }
}
