//! Deterministic backends: a digest-keyed script and a transcript replayer.

use std::collections::{HashMap, VecDeque};
use std::io::BufRead;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::{digest_messages, ChatBackend, ChatMessage, CompletionRequest, GatewayError, TranscriptEntry};

/// Answers from a fixed map of message digest to response text.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    script: HashMap<String, String>,
    strict: bool,
    fallback: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptLine {
    Messages { messages: Vec<ChatMessage>, response: String },
    Digest { digest: String, response: String },
}

impl ScriptedBackend {
    pub fn new(strict: bool) -> Self {
        Self {
            script: HashMap::new(),
            strict,
            fallback: String::new(),
        }
    }

    /// Response returned for unmapped requests when not strict.
    pub fn with_fallback(mut self, fallback: impl Into<String>) -> Self {
        self.fallback = fallback.into();
        self
    }

    pub fn insert(&mut self, messages: &[ChatMessage], response: impl Into<String>) {
        self.script.insert(digest_messages(messages), response.into());
    }

    pub fn insert_digest(&mut self, digest: impl Into<String>, response: impl Into<String>) {
        self.script.insert(digest.into(), response.into());
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }

    /// Loads a JSONL script. Each line is either
    /// `{"messages": [...], "response": "..."}` or
    /// `{"digest": "<hex>", "response": "..."}`.
    pub fn from_jsonl<R: BufRead>(input: R, strict: bool) -> Result<Self, GatewayError> {
        let mut backend = Self::new(strict);
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| GatewayError::Config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine = serde_json::from_str(&line)
                .map_err(|e| GatewayError::Config(format!("script line {}: {e}", i + 1)))?;
            match parsed {
                ScriptLine::Messages { messages, response } => backend.insert(&messages, response),
                ScriptLine::Digest { digest, response } => backend.insert_digest(digest, response),
            }
        }
        Ok(backend)
    }

    pub fn load(path: &Path, strict: bool) -> Result<Self, GatewayError> {
        let file = std::fs::File::open(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(std::io::BufReader::new(file), strict)
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let digest = request.digest();
        match self.script.get(&digest) {
            Some(response) => Ok(response.clone()),
            None if self.strict => Err(GatewayError::Unscripted { digest }),
            None => Ok(self.fallback.clone()),
        }
    }
}

/// Replays recorded outcomes. Identical requests receive their recorded
/// outcomes in the order they were originally logged.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    outcomes: Mutex<HashMap<String, VecDeque<Result<String, String>>>>,
}

impl ReplayBackend {
    pub fn from_entries(entries: &[TranscriptEntry]) -> Self {
        let mut outcomes: HashMap<String, VecDeque<Result<String, String>>> = HashMap::new();
        for entry in entries {
            match entry {
                TranscriptEntry::Response { digest, content, .. } => {
                    outcomes.entry(digest.clone()).or_default().push_back(Ok(content.clone()));
                }
                TranscriptEntry::Error { digest, message, .. } => {
                    outcomes.entry(digest.clone()).or_default().push_back(Err(message.clone()));
                }
                TranscriptEntry::Request { .. } => {}
            }
        }
        Self {
            outcomes: Mutex::new(outcomes),
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::from_entries(&super::read_transcript(path)?))
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let digest = request.digest();
        let mut outcomes = self.outcomes.lock().expect("replay lock");
        match outcomes.get_mut(&digest).and_then(VecDeque::pop_front) {
            Some(Ok(content)) => Ok(content),
            Some(Err(message)) => Err(GatewayError::Unavailable {
                attempts: 0,
                last_error: format!("replayed failure: {message}"),
            }),
            None => Err(GatewayError::Unscripted { digest }),
        }
    }
}
