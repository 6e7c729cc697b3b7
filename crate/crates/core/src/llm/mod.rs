//! Chat-completion access with one session per pipeline stage.
//!
//! Three backends share the [`LlmBackend`] trait: a live HTTP client, a
//! scripted replayer driven by a JSONL transcript, and a recorder that
//! wraps the live client and appends each exchange to a transcript.

mod live;
mod transcript;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use live::{
    ChatRequest, ChatResponse, ChatTransport, HttpTransport, LiveBackend, TransportFailure,
};
pub use transcript::{
    fingerprint, load_transcript, RecordingBackend, ScriptedBackend, Transcript, TranscriptEntry,
    TranscriptHeader,
};

pub const DEFAULT_MODEL: &str = "o4-mini";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    EntryCollector,
    AnalysisSelector,
    ChainSelector,
    Reasoner,
    Summarizer,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::EntryCollector,
        Stage::AnalysisSelector,
        Stage::ChainSelector,
        Stage::Reasoner,
        Stage::Summarizer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::EntryCollector => "entry_collector",
            Stage::AnalysisSelector => "analysis_selector",
            Stage::ChainSelector => "chain_selector",
            Stage::Reasoner => "reasoner",
            Stage::Summarizer => "summarizer",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = LlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| LlmError::ConfigInvalid(format!("unknown stage label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Live,
    Scripted,
    Recording,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub backend: BackendKind,
    pub model_name: String,
    /// Base URL of an OpenAI-compatible API, or the full
    /// `.../chat/completions` URL.
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_ref: Option<String>,
    pub max_retries: u32,
    pub request_timeout_secs: u64,
    /// First retry delay; doubles on every further attempt.
    pub retry_backoff_ms: u64,
    /// Omitted from requests when unset.
    pub temperature: Option<f32>,
    /// Replay source for `scripted`, output file for `recording`.
    pub transcript: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            backend: BackendKind::Live,
            model_name: DEFAULT_MODEL.to_string(),
            endpoint: Some("https://api.openai.com/v1".to_string()),
            api_key_ref: Some(DEFAULT_API_KEY_ENV.to_string()),
            max_retries: 3,
            request_timeout_secs: 120,
            retry_backoff_ms: 500,
            temperature: None,
            transcript: None,
        }
    }
}

impl LlmConfig {
    pub fn scripted(transcript: impl Into<PathBuf>) -> Self {
        LlmConfig {
            backend: BackendKind::Scripted,
            transcript: Some(transcript.into()),
            ..LlmConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let invalid = |m: &str| Err(LlmError::ConfigInvalid(m.to_string()));
        let needs_live = matches!(self.backend, BackendKind::Live | BackendKind::Recording);
        if needs_live {
            if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
                return invalid("live backend requires an endpoint");
            }
            if self.api_key_ref.as_deref().is_none_or(|e| e.trim().is_empty()) {
                return invalid("live backend requires api_key_ref");
            }
            if self.model_name.trim().is_empty() {
                return invalid("model_name is empty");
            }
            if self.request_timeout_secs == 0 {
                return invalid("request_timeout_secs must be positive");
            }
        }
        if self.backend != BackendKind::Live && self.transcript.is_none() {
            return invalid("scripted and recording backends require a transcript path");
        }
        Ok(())
    }

    pub(crate) fn header(&self) -> TranscriptHeader {
        TranscriptHeader {
            model_name: self.model_name.clone(),
            endpoint: self.endpoint.clone(),
            temperature: self.temperature,
            max_retries: self.max_retries,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("{0}")]
    ConfigInvalid(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("no transcript entries left for stage {0}")]
    TranscriptExhausted(Stage),
    #[error("requested stage {requested}, next remaining entry is for {next}")]
    TranscriptStageMismatch { requested: Stage, next: Stage },
    #[error("transcript {path}:{line}: {message}")]
    TranscriptInvalid {
        path: String,
        line: usize,
        message: String,
    },
    #[error("transcript I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl LlmError {
    /// Short variant name, used as a prefix in failure reasons.
    pub fn kind(&self) -> &'static str {
        match self {
            LlmError::ConfigInvalid(_) => "ConfigInvalid",
            LlmError::EmptyPrompt => "EmptyPrompt",
            LlmError::Transport { .. } => "TransportError",
            LlmError::TranscriptExhausted(_) => "TranscriptExhausted",
            LlmError::TranscriptStageMismatch { .. } => "TranscriptStageMismatch",
            LlmError::TranscriptInvalid { .. } => "TranscriptInvalid",
            LlmError::Io { .. } => "Io",
        }
    }
}

/// One reply from a backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub token_counts: Option<(u64, u64)>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Completion {
            text: text.into(),
            token_counts: None,
        }
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, stage: Stage, prompt: &str) -> Result<Completion, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub prompt: String,
    pub response: String,
    pub latency_ms: u64,
    pub token_counts: Option<(u64, u64)>,
}

/// Conversation state for one stage. History is kept for auditing only;
/// every prompt is self-contained and nothing from it is resent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    stage: Stage,
    history: Vec<LlmExchange>,
}

impl Session {
    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn history(&self) -> &[LlmExchange] {
        &self.history
    }

    pub fn last(&self) -> Option<&LlmExchange> {
        self.history.last()
    }
}

pub struct LlmGateway {
    backend: Box<dyn LlmBackend>,
}

impl fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmGateway").finish_non_exhaustive()
    }
}

impl LlmGateway {
    pub fn from_config(config: &LlmConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let backend: Box<dyn LlmBackend> = match config.backend {
            BackendKind::Live => Box::new(LiveBackend::from_config(config)?),
            BackendKind::Scripted => {
                let path = config.transcript.as_ref().expect("validated");
                Box::new(ScriptedBackend::new(load_transcript(path)?))
            }
            BackendKind::Recording => {
                let path = config.transcript.as_ref().expect("validated");
                let live = LiveBackend::from_config(config)?;
                Box::new(RecordingBackend::create(Box::new(live), path, config.header())?)
            }
        };
        Ok(LlmGateway { backend })
    }

    pub fn with_backend(backend: Box<dyn LlmBackend>) -> Self {
        LlmGateway { backend }
    }

    pub fn new_session(&self, stage: Stage) -> Session {
        Session {
            stage,
            history: Vec::new(),
        }
    }

    /// Sends `prompt` on behalf of `session` and records the exchange.
    pub fn complete(&self, session: &mut Session, prompt: &str) -> Result<String, LlmError> {
        if prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let started = Instant::now();
        let completion = self.backend.complete(session.stage, prompt)?;
        let latency_ms = u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX);
        session.history.push(LlmExchange {
            prompt: prompt.to_string(),
            response: completion.text.clone(),
            latency_ms,
            token_counts: completion.token_counts,
        });
        Ok(completion.text)
    }
}

pub(crate) fn backoff_delay(base_ms: u64, retry: u32) -> Duration {
    let factor = 1u64.checked_shl(retry.min(16)).unwrap_or(u64::MAX);
    Duration::from_millis(base_ms.saturating_mul(factor).min(30_000))
}
