//! Chat-completion gateway: message types, the backend trait, the
//! transcript log and the dialogue driver.
//!
//! Every outbound request is appended to the transcript before the backend is
//! invoked, so a crash mid-request still leaves the request on disk.

mod http;
mod oracle;
mod scripted;

use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, RetryPolicy};
pub use oracle::{GroundTruthRule, OracleWorld, OracleWorldBackend};
pub use scripted::{ReplayBackend, ScriptedBackend};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway unavailable after {attempts} attempts: {last_error}")]
    Unavailable { attempts: u32, last_error: String },
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("prompt too long: {0}")]
    PromptTooLong(String),
    #[error("no scripted response for request digest {digest}")]
    Unscripted { digest: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("transcript: {0}")]
    Transcript(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub model_name: String,
    pub max_retries: u32,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} is negative",
                self.temperature
            )));
        }
        if let Some(m) = self
            .messages
            .iter()
            .find(|m| m.role != Role::System && m.content.trim().is_empty())
        {
            return Err(GatewayError::InvalidRequest(format!("empty {} turn", m.role.as_str())));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest_messages(&self.messages)
    }

    pub fn char_len(&self) -> usize {
        self.messages.iter().map(|m| m.content.chars().count()).sum()
    }
}

/// The body sent to an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug, Serialize)]
pub struct WireRequest<'a> {
    pub model: &'a str,
    pub messages: &'a [ChatMessage],
    pub temperature: f64,
}

impl<'a> From<&'a CompletionRequest> for WireRequest<'a> {
    fn from(req: &'a CompletionRequest) -> Self {
        Self {
            model: &req.model_name,
            messages: &req.messages,
            temperature: req.temperature,
        }
    }
}

/// SHA-256 over role/content pairs after whitespace normalization, hex encoded.
pub fn digest_messages(messages: &[ChatMessage]) -> String {
    let mut hasher = Sha256::new();
    for m in messages {
        hasher.update(m.role.as_str().as_bytes());
        hasher.update([0x1f]);
        let normalized = m.content.split_whitespace().collect::<Vec<_>>().join(" ");
        hasher.update(normalized.as_bytes());
        hasher.update([0x1e]);
    }
    hex::encode(hasher.finalize())
}

/// A chat-completion provider.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

/// One transcript record. Requests and their outcomes share a sequence number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranscriptEntry {
    Request {
        seq: u64,
        digest: String,
        model: String,
        temperature: f64,
        messages: Vec<ChatMessage>,
    },
    Response {
        seq: u64,
        digest: String,
        content: String,
    },
    Error {
        seq: u64,
        digest: String,
        message: String,
    },
}

/// Reads a JSONL transcript.
pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, GatewayError> {
    let file = File::open(path).map_err(|e| GatewayError::Transcript(format!("{}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Transcript(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| GatewayError::Transcript(format!("line {}: {e}", i + 1)))?;
        entries.push(entry);
    }
    Ok(entries)
}

#[derive(Default)]
struct TranscriptLog {
    seq: u64,
    entries: Vec<TranscriptEntry>,
    sink: Option<BufWriter<File>>,
}

impl TranscriptLog {
    fn push(&mut self, entry: TranscriptEntry) -> Result<(), GatewayError> {
        if let Some(sink) = self.sink.as_mut() {
            let io = |e: std::io::Error| GatewayError::Transcript(e.to_string());
            serde_json::to_writer(&mut *sink, &entry).map_err(|e| GatewayError::Transcript(e.to_string()))?;
            sink.write_all(b"\n").map_err(io)?;
            sink.flush().map_err(io)?;
        }
        self.entries.push(entry);
        Ok(())
    }
}

/// Gateway settings shared by every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewaySettings {
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    /// Requests longer than this many characters fail instead of being sent.
    pub max_prompt_chars: Option<usize>,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            model_name: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_retries: 3,
            max_prompt_chars: None,
        }
    }
}

/// Front door for all completions: applies settings, logs the transcript and
/// forwards to the backend.
pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    settings: GatewaySettings,
    log: Mutex<TranscriptLog>,
}

impl Gateway {
    pub fn new(backend: impl ChatBackend + 'static, settings: GatewaySettings) -> Self {
        Self::from_boxed(Box::new(backend), settings)
    }

    pub fn from_boxed(backend: Box<dyn ChatBackend>, settings: GatewaySettings) -> Self {
        Self {
            backend,
            settings,
            log: Mutex::new(TranscriptLog::default()),
        }
    }

    /// Also stream transcript records to `path` (truncating it).
    pub fn with_transcript_file(self, path: &Path) -> Result<Self, GatewayError> {
        let file = File::create(path).map_err(|e| GatewayError::Transcript(format!("{}: {e}", path.display())))?;
        self.log.lock().expect("transcript lock").sink = Some(BufWriter::new(file));
        Ok(self)
    }

    pub fn settings(&self) -> &GatewaySettings {
        &self.settings
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.log.lock().expect("transcript lock").entries.clone()
    }

    pub fn request_count(&self) -> usize {
        self.log
            .lock()
            .expect("transcript lock")
            .entries
            .iter()
            .filter(|e| matches!(e, TranscriptEntry::Request { .. }))
            .count()
    }

    pub fn request(&self, messages: Vec<ChatMessage>) -> CompletionRequest {
        CompletionRequest {
            messages,
            temperature: self.settings.temperature,
            model_name: self.settings.model_name.clone(),
            max_retries: self.settings.max_retries,
        }
    }

    pub fn complete(&self, messages: Vec<ChatMessage>) -> Result<String, GatewayError> {
        let request = self.request(messages);
        request.validate()?;
        if let Some(limit) = self.settings.max_prompt_chars {
            let len = request.char_len();
            if len > limit {
                return Err(GatewayError::PromptTooLong(format!("{len} chars exceeds limit {limit}")));
            }
        }
        let digest = request.digest();
        let seq = {
            let mut log = self.log.lock().expect("transcript lock");
            let seq = log.seq;
            log.seq += 1;
            log.push(TranscriptEntry::Request {
                seq,
                digest: digest.clone(),
                model: request.model_name.clone(),
                temperature: request.temperature,
                messages: request.messages.clone(),
            })?;
            seq
        };
        let result = self.backend.complete(&request);
        let mut log = self.log.lock().expect("transcript lock");
        match &result {
            Ok(content) => log.push(TranscriptEntry::Response {
                seq,
                digest,
                content: content.clone(),
            })?,
            Err(e) => log.push(TranscriptEntry::Error {
                seq,
                digest,
                message: e.to_string(),
            })?,
        }
        result
    }

    /// Sends `turns` one after another on top of `seed`, keeping the full
    /// history. Returns every assistant reply; stops at the first error.
    pub fn run_dialogue(&self, seed: Vec<ChatMessage>, turns: &[String]) -> Result<Vec<String>, GatewayError> {
        if turns.is_empty() {
            return Err(GatewayError::InvalidRequest("dialogue has no turns".into()));
        }
        let mut history = seed;
        let mut replies = Vec::with_capacity(turns.len());
        for turn in turns {
            history.push(ChatMessage::user(turn.clone()));
            let reply = self.complete(history.clone())?;
            history.push(ChatMessage::assistant(reply.clone()));
            replies.push(reply);
        }
        Ok(replies)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_whitespace_layout() {
        let a = vec![ChatMessage::user("Hello   world\n")];
        let b = vec![ChatMessage::user(" Hello world")];
        let c = vec![ChatMessage::system("Hello world")];
        assert_eq!(digest_messages(&a), digest_messages(&b));
        assert_ne!(digest_messages(&a), digest_messages(&c));
        assert_eq!(digest_messages(&a).len(), 64);
    }

    #[test]
    fn request_validation() {
        let gw = Gateway::new(ScriptedBackend::new(true), GatewaySettings::default());
        assert!(matches!(gw.complete(vec![]), Err(GatewayError::InvalidRequest(_))));
        assert!(matches!(
            gw.complete(vec![ChatMessage::user("  ")]),
            Err(GatewayError::InvalidRequest(_))
        ));
        let mut req = gw.request(vec![ChatMessage::user("x")]);
        req.temperature = -1.0;
        assert!(req.validate().is_err());
    }

    #[test]
    fn prompt_length_limit() {
        let mut backend = ScriptedBackend::new(true);
        backend.insert(&[ChatMessage::user("short")], "ok");
        let settings = GatewaySettings {
            max_prompt_chars: Some(6),
            ..Default::default()
        };
        let gw = Gateway::new(backend, settings);
        assert_eq!(gw.complete(vec![ChatMessage::user("short")]).unwrap(), "ok");
        assert!(matches!(
            gw.complete(vec![ChatMessage::user("far too long")]),
            Err(GatewayError::PromptTooLong(_))
        ));
    }

    #[test]
    fn transcript_records_request_before_outcome() {
        let mut backend = ScriptedBackend::new(true);
        backend.insert(&[ChatMessage::user("q")], "a");
        let gw = Gateway::new(backend, GatewaySettings::default());
        gw.complete(vec![ChatMessage::user("q")]).unwrap();
        assert!(gw.complete(vec![ChatMessage::user("unknown")]).is_err());
        let t = gw.transcript();
        assert_eq!(t.len(), 4);
        assert!(matches!(&t[0], TranscriptEntry::Request { seq: 0, .. }));
        assert!(matches!(&t[1], TranscriptEntry::Response { seq: 0, content, .. } if content == "a"));
        assert!(matches!(&t[2], TranscriptEntry::Request { seq: 1, .. }));
        assert!(matches!(&t[3], TranscriptEntry::Error { seq: 1, .. }));
        assert_eq!(gw.request_count(), 2);
    }

    #[test]
    fn transcript_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut backend = ScriptedBackend::new(true);
        backend.insert(&[ChatMessage::user("q")], "a");
        let gw = Gateway::new(backend, GatewaySettings::default())
            .with_transcript_file(&path)
            .unwrap();
        gw.complete(vec![ChatMessage::user("q")]).unwrap();
        assert_eq!(read_transcript(&path).unwrap(), gw.transcript());
    }

    #[test]
    fn single_turn_dialogue_with_empty_seed() {
        let mut backend = ScriptedBackend::new(true);
        backend.insert(&[ChatMessage::user("hi")], "hello");
        let gw = Gateway::new(backend, GatewaySettings::default());
        assert_eq!(gw.run_dialogue(vec![], &["hi".to_string()]).unwrap(), ["hello"]);
        assert!(gw.run_dialogue(vec![], &[]).is_err());
    }

    #[test]
    fn dialogue_aborts_on_first_error() {
        let mut backend = ScriptedBackend::new(true);
        backend.insert(&[ChatMessage::user("one")], "1");
        let gw = Gateway::new(backend, GatewaySettings::default());
        let turns = ["one".to_string(), "two".to_string(), "three".to_string()];
        assert!(matches!(
            gw.run_dialogue(vec![], &turns),
            Err(GatewayError::Unscripted { .. })
        ));
        assert_eq!(gw.request_count(), 2, "third turn never sent");
    }
}
