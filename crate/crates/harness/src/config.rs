//! Run configuration, loaded from a TOML file and overridden by CLI flags.

use std::path::{Path, PathBuf};

use rulebook_core::engine::EngineConfig;
use rulebook_core::gateway::{GatewaySettings, HttpConfig, RetryPolicy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Stream,
    TrainTest,
    CrossDomain,
    Counterfactual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    None,
    #[default]
    ZeroShot,
    ZeroShotCot,
    FewShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub api_key_env: String,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_jitter: bool,
    pub max_prompt_chars: Option<usize>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        let http = HttpConfig::default();
        let settings = GatewaySettings::default();
        Self {
            base_url: http.base_url,
            model: settings.model_name,
            temperature: settings.temperature,
            timeout_secs: http.timeout_secs,
            api_key_env: http.api_key_env,
            max_retries: settings.max_retries,
            backoff_base_ms: http.retry.base_delay_ms,
            backoff_jitter: http.retry.jitter,
            max_prompt_chars: settings.max_prompt_chars,
        }
    }
}

impl GatewayConfig {
    pub fn settings(&self) -> GatewaySettings {
        GatewaySettings {
            model_name: self.model.clone(),
            temperature: self.temperature,
            max_retries: self.max_retries,
            max_prompt_chars: self.max_prompt_chars,
        }
    }

    pub fn http(&self) -> HttpConfig {
        HttpConfig {
            base_url: self.base_url.clone(),
            timeout_secs: self.timeout_secs,
            api_key_env: self.api_key_env.clone(),
            retry: RetryPolicy {
                base_delay_ms: self.backoff_base_ms,
                jitter: self.backoff_jitter,
                ..RetryPolicy::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub task_id: String,
    pub mode: Mode,
    /// Seeded shuffle of the loaded order; `None` keeps file order.
    pub shuffle_seed: Option<u64>,
    /// Applied after shuffling.
    pub sample_limit: Option<usize>,
    pub baseline: Baseline,
    /// Train fraction for `train_test`.
    pub split_ratio: Option<f64>,
    /// Rule snapshot preloaded before the run (required for `cross_domain`).
    pub source_rules: Option<PathBuf>,
    /// Counterfactual relabeling marker.
    pub marker: String,
    /// Rule texts admitted before the first step.
    pub preload_rules: Vec<String>,
    /// Extra task definitions; builtins are used when absent.
    pub tasks_file: Option<PathBuf>,
    pub engine: EngineConfig,
    pub gateway: GatewayConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            task_id: String::new(),
            mode: Mode::Stream,
            shuffle_seed: None,
            sample_limit: None,
            baseline: Baseline::ZeroShot,
            split_ratio: None,
            source_rules: None,
            marker: "#".into(),
            preload_rules: Vec::new(),
            tasks_file: None,
            engine: EngineConfig::default(),
            gateway: GatewayConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(config.schema_version));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.task_id.is_empty() {
            return invalid("task_id is required");
        }
        let e = &self.engine;
        if e.k_rules == 0 || e.capacity == 0 || e.m_mistakes == 0 || e.max_rules_per_generation == 0 {
            return invalid("engine k_rules, capacity, m_mistakes and max_rules_per_generation must be positive");
        }
        if !(0.0..=2.0).contains(&self.gateway.temperature) {
            return invalid("temperature must lie in [0, 2]");
        }
        match self.mode {
            Mode::TrainTest => match self.split_ratio {
                Some(r) if r > 0.0 && r < 1.0 => {}
                Some(_) => return invalid("split_ratio must lie strictly between 0 and 1"),
                None => return invalid("train_test mode requires split_ratio"),
            },
            Mode::CrossDomain if self.source_rules.is_none() => {
                return invalid("cross_domain mode requires a source rule collection")
            }
            Mode::Counterfactual if self.marker.is_empty() => return invalid("counterfactual marker is empty"),
            _ => {}
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.engine.k_rules, 3);
        assert_eq!(c.engine.capacity, 100);
        assert_eq!(c.engine.few_shot_n, 4);
        assert_eq!(c.gateway.temperature, 0.0);
        assert_eq!(c.gateway.max_retries, 3);
        assert_eq!(c.gateway.backoff_base_ms, 1000);
    }

    #[test]
    fn partial_file_fills_defaults_and_round_trips() {
        let text = "task_id = \"agnews\"\nmode = \"train_test\"\nsplit_ratio = 0.8\n[engine]\nk_rules = 5\n";
        let c = RunConfig::from_toml(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.engine.k_rules, 5);
        assert_eq!(c.engine.capacity, 100);
        c.validate().unwrap();
        let again = RunConfig::from_toml(&c.to_toml(), Path::new("y.toml")).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn invariants() {
        let mut c = RunConfig {
            task_id: "agnews".into(),
            mode: Mode::TrainTest,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.split_ratio = Some(1.0);
        assert!(c.validate().is_err());
        c.mode = Mode::CrossDomain;
        assert!(c.validate().is_err());
        c.source_rules = Some("rules.jsonl".into());
        c.validate().unwrap();
        assert!(matches!(
            RunConfig::from_toml("schema_version = 9", Path::new("z")),
            Err(ConfigError::Schema(9))
        ));
        assert!(RunConfig::from_toml("bogus = [", Path::new("z")).is_err());
    }
}
