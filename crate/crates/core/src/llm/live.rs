use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{backoff_delay, Completion, LlmBackend, LlmConfig, LlmError, Stage};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub token_counts: Option<(u64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportFailure {
    /// Timeouts, connection errors, 429 and 5xx are worth retrying.
    pub transient: bool,
    pub message: String,
}

impl TransportFailure {
    pub fn transient(message: impl Into<String>) -> Self {
        TransportFailure {
            transient: true,
            message: message.into(),
        }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        TransportFailure {
            transient: false,
            message: message.into(),
        }
    }
}

/// One request/response round trip. Split out so retries can be tested
/// with an in-memory double.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportFailure>;
}

/// OpenAI-style `POST /chat/completions` over blocking HTTP.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    api_key: String,
}

impl HttpTransport {
    pub fn new(endpoint: &str, api_key: String, timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::ConfigInvalid(format!("http client: {e}")))?;
        let trimmed = endpoint.trim().trim_end_matches('/');
        let url = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        };
        Ok(HttpTransport {
            client,
            url,
            api_key,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportFailure> {
        let mut body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        if let Some(t) = request.temperature {
            body["temperature"] = json!(t);
        }
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| TransportFailure::transient(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let detail = resp.text().unwrap_or_default();
            let msg = format!("HTTP {status}: {}", detail.chars().take(500).collect::<String>());
            return Err(if status.as_u16() == 429 || status.is_server_error() {
                TransportFailure::transient(msg)
            } else {
                TransportFailure::permanent(msg)
            });
        }
        let wire: WireResponse = resp
            .json()
            .map_err(|e| TransportFailure::transient(format!("bad response body: {e}")))?;
        let text = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportFailure::permanent("response has no message content"))?;
        Ok(ChatResponse {
            text,
            token_counts: wire.usage.map(|u| (u.prompt_tokens, u.completion_tokens)),
        })
    }
}

pub struct LiveBackend {
    transport: Box<dyn ChatTransport>,
    model: String,
    temperature: Option<f32>,
    max_retries: u32,
    backoff_ms: u64,
}

impl LiveBackend {
    pub fn from_config(config: &LlmConfig) -> Result<Self, LlmError> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| LlmError::ConfigInvalid("live backend requires an endpoint".into()))?;
        let key_ref = config
            .api_key_ref
            .as_deref()
            .ok_or_else(|| LlmError::ConfigInvalid("live backend requires api_key_ref".into()))?;
        let api_key = std::env::var(key_ref).map_err(|_| {
            LlmError::ConfigInvalid(format!("environment variable {key_ref} is not set"))
        })?;
        let transport = HttpTransport::new(
            endpoint,
            api_key,
            Duration::from_secs(config.request_timeout_secs),
        )?;
        Ok(Self::with_transport(Box::new(transport), config))
    }

    pub fn with_transport(transport: Box<dyn ChatTransport>, config: &LlmConfig) -> Self {
        LiveBackend {
            transport,
            model: config.model_name.clone(),
            temperature: config.temperature,
            max_retries: config.max_retries,
            backoff_ms: config.retry_backoff_ms,
        }
    }
}

impl LlmBackend for LiveBackend {
    fn complete(&self, stage: Stage, prompt: &str) -> Result<Completion, LlmError> {
        let request = ChatRequest {
            model: self.model.clone(),
            prompt: prompt.to_string(),
            temperature: self.temperature,
        };
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.transport.send(&request) {
                Ok(r) => {
                    return Ok(Completion {
                        text: r.text,
                        token_counts: r.token_counts,
                    })
                }
                Err(f) if f.transient && attempts <= self.max_retries => {
                    let delay = backoff_delay(self.backoff_ms, attempts - 1);
                    log::warn!("{stage}: transient failure ({}), retrying in {delay:?}", f.message);
                    std::thread::sleep(delay);
                }
                Err(f) => {
                    return Err(LlmError::Transport {
                        attempts,
                        message: f.message,
                    })
                }
            }
        }
    }
}
