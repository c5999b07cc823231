//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may appear once
//! per file; overrides applied afterwards (command-line flags) replace file
//! values.

use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

use crate::eval::AbsentPolicy;
use crate::exec::ConsensusMode;
use crate::retrieve::RetrievalConfig;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum BackendKind {
    Exact,
    Evidence,
    Llm,
    Scripted,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Evidence => "evidence",
            Self::Llm => "llm",
            Self::Scripted => "scripted",
        }
    }
}

/// Which graph the exact backend answers over.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum GraphChoice {
    Full,
    Observed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: String,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub observe_valid: bool,
    pub query_file: Option<PathBuf>,
    pub answer_file: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub retrieval: RetrievalConfig,
    pub backend: BackendKind,
    pub exact_graph: GraphChoice,
    pub llm_endpoint: Option<String>,
    pub llm_attempts: usize,
    pub llm_backoff: Duration,
    pub llm_timeout: Duration,
    pub llm_max_in_flight: usize,
    pub script_file: Option<PathBuf>,
    pub prompt_template: Option<PathBuf>,
    pub cache: bool,
    pub consensus_agents: usize,
    /// `None` means strict majority.
    pub consensus_threshold: Option<usize>,
    pub consensus_mode: ConsensusMode,
    pub absent: AbsentPolicy,
    pub seed: u64,
    pub workers: usize,
    pub retry_factor: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "kg".into(),
            train: None,
            valid: None,
            test: None,
            observe_valid: false,
            query_file: None,
            answer_file: None,
            out_dir: PathBuf::from("out"),
            retrieval: RetrievalConfig::default(),
            backend: BackendKind::Exact,
            exact_graph: GraphChoice::Full,
            llm_endpoint: None,
            llm_attempts: 3,
            llm_backoff: Duration::from_millis(250),
            llm_timeout: Duration::from_secs(120),
            llm_max_in_flight: 4,
            script_file: None,
            prompt_template: None,
            cache: true,
            consensus_agents: 1,
            consensus_threshold: None,
            consensus_mode: ConsensusMode::PerStep,
            absent: AbsentPolicy::Zero,
            seed: 0,
            workers: 1,
            retry_factor: 100,
        }
    }
}

pub const KEYS: &[&str] = &[
    "dataset",
    "train",
    "valid",
    "test",
    "observe_valid",
    "query_file",
    "answer_file",
    "out_dir",
    "k_hops",
    "max_triples",
    "relation_priority",
    "expand_intermediates",
    "backend",
    "exact_graph",
    "llm_endpoint",
    "llm_attempts",
    "llm_backoff_ms",
    "llm_timeout_ms",
    "llm_max_in_flight",
    "script_file",
    "prompt_template",
    "cache",
    "consensus_agents",
    "consensus_threshold",
    "consensus_mode",
    "absent",
    "seed",
    "workers",
    "retry_factor",
];

/// Splits a config body into `(line, key, value)` entries.
pub fn parse_entries(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        if out.iter().any(|(_, seen, _)| seen == k) {
            return Err(ConfigError::Duplicate {
                line: i + 1,
                key: k.to_string(),
            });
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, v, "expected true or false")),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| bad(key, v, e.to_string()))
}

fn positive(key: &str, v: &str) -> Result<usize, ConfigError> {
    match parse_num::<usize>(key, v)? {
        0 => Err(bad(key, v, "must be at least 1")),
        n => Ok(n),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (_, k, v) in parse_entries(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a single setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "dataset" => self.dataset = v.to_string(),
            "train" => self.train = path(v),
            "valid" => self.valid = path(v),
            "test" => self.test = path(v),
            "observe_valid" => self.observe_valid = parse_bool(key, v)?,
            "query_file" => self.query_file = path(v),
            "answer_file" => self.answer_file = path(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "k_hops" => self.retrieval.k_hops = positive(key, v)?,
            "max_triples" => {
                self.retrieval.max_triples = match v {
                    "inf" | "unlimited" => usize::MAX,
                    _ => positive(key, v)?,
                }
            }
            "relation_priority" => self.retrieval.relation_priority = parse_bool(key, v)?,
            "expand_intermediates" => self.retrieval.expand_intermediates = parse_bool(key, v)?,
            "backend" => {
                self.backend = match v {
                    "exact" => BackendKind::Exact,
                    "evidence" => BackendKind::Evidence,
                    "llm" => BackendKind::Llm,
                    "scripted" => BackendKind::Scripted,
                    _ => return Err(bad(key, v, "expected exact, evidence, llm or scripted")),
                }
            }
            "exact_graph" => {
                self.exact_graph = match v {
                    "full" => GraphChoice::Full,
                    "observed" => GraphChoice::Observed,
                    _ => return Err(bad(key, v, "expected full or observed")),
                }
            }
            "llm_endpoint" => self.llm_endpoint = (!v.is_empty()).then(|| v.to_string()),
            "llm_attempts" => self.llm_attempts = positive(key, v)?,
            "llm_backoff_ms" => self.llm_backoff = Duration::from_millis(parse_num(key, v)?),
            "llm_timeout_ms" => self.llm_timeout = Duration::from_millis(positive(key, v)? as u64),
            "llm_max_in_flight" => self.llm_max_in_flight = positive(key, v)?,
            "script_file" => self.script_file = path(v),
            "prompt_template" => self.prompt_template = path(v),
            "cache" => self.cache = parse_bool(key, v)?,
            "consensus_agents" => self.consensus_agents = positive(key, v)?,
            "consensus_threshold" => {
                self.consensus_threshold = match v {
                    "majority" | "" => None,
                    _ => Some(positive(key, v)?),
                }
            }
            "consensus_mode" => {
                self.consensus_mode = match v {
                    "per-step" => ConsensusMode::PerStep,
                    "final" => ConsensusMode::FinalOnly,
                    _ => return Err(bad(key, v, "expected per-step or final")),
                }
            }
            "absent" => {
                self.absent = match v {
                    "zero" => AbsentPolicy::Zero,
                    "worst" => AbsentPolicy::WorstCase,
                    _ => return Err(bad(key, v, "expected zero or worst")),
                }
            }
            "seed" => self.seed = parse_num(key, v)?,
            "workers" => self.workers = positive(key, v)?,
            "retry_factor" => self.retry_factor = positive(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies `key=value` overrides, then re-validates.
    pub fn apply_overrides<'a>(
        &mut self,
        overrides: impl IntoIterator<Item = &'a str>,
    ) -> Result<(), ConfigError> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::Invalid(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn consensus_threshold(&self) -> usize {
        self.consensus_threshold
            .unwrap_or(self.consensus_agents / 2 + 1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = self.consensus_threshold();
        if t > self.consensus_agents {
            return Err(ConfigError::Invalid(format!(
                "consensus_threshold {t} exceeds consensus_agents {}",
                self.consensus_agents
            )));
        }
        Ok(())
    }
}
