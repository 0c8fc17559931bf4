//! Live OpenAI-compatible chat-completion backend with bounded exponential
//! retry and a concurrency gate.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{BackendKind, LlmGateway, LlmRequest, LlmResponse, TokenUsage};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Base URL of the provider, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    pub api_key: String,
    pub max_attempts: u32,
    pub request_timeout: Duration,
    /// Maximum concurrent in-flight requests.
    pub max_in_flight: usize,
}

impl LiveConfig {
    /// Read provider settings from GBV_API_BASE, GBV_MODEL, GBV_API_KEY.
    pub fn from_env() -> Result<Self> {
        let base_url = std::env::var("GBV_API_BASE")
            .map_err(|_| Error::invalid("GBV_API_BASE is not set"))?;
        let model = std::env::var("GBV_MODEL").map_err(|_| Error::invalid("GBV_MODEL is not set"))?;
        let api_key = std::env::var("GBV_API_KEY").unwrap_or_default();
        Ok(LiveConfig {
            base_url,
            model,
            api_key,
            max_attempts: 5,
            request_timeout: Duration::from_secs(120),
            max_in_flight: 4,
        })
    }
}

/// Counting gate over in-flight requests.
struct Gate {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate { permits: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    message: MessageBody,
}

#[derive(Deserialize)]
struct MessageBody {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct UsageBody {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let gate = Gate::new(config.max_in_flight);
        Ok(LiveBackend { config, client, gate })
    }

    pub fn model(&self) -> &str {
        &self.config.model
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, request: &LlmRequest) -> std::result::Result<LlmResponse, (String, bool)> {
        let body = json!({
            "model": self.config.model,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
        });
        let start = Instant::now();
        let mut req = self.client.post(self.endpoint()).json(&body);
        if !self.config.api_key.is_empty() {
            req = req.bearer_auth(&self.config.api_key);
        }
        let resp = req.send().map_err(|e| (format!("request failed: {e}"), true))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| (format!("body read failed: {e}"), true))?;
        if !status.is_success() {
            // Rate limits and server hiccups are retryable; the rest carry
            // the provider payload straight to the caller.
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err((format!("http {status}: {text}"), retryable));
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| (format!("bad provider payload: {e}: {text}"), false))?;
        let content = parsed
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .ok_or_else(|| (format!("provider returned no content: {text}"), false))?;
        Ok(LlmResponse {
            text: content,
            usage: parsed.usage.map(|u| TokenUsage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
            backend: BackendKind::Live,
        })
    }
}

impl LlmGateway for LiveBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        self.gate.acquire();
        let result = (|| {
            let mut last_err = String::new();
            for attempt in 0..self.config.max_attempts {
                if attempt > 0 {
                    let backoff = Duration::from_millis(250u64 << (attempt - 1).min(5));
                    std::thread::sleep(backoff);
                }
                match self.attempt(request) {
                    Ok(resp) => return Ok(resp),
                    Err((msg, retryable)) => {
                        last_err = msg;
                        if !retryable {
                            break;
                        }
                    }
                }
            }
            Err(Error::Transport(last_err))
        })();
        self.gate.release();
        result
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn deterministic(&self) -> bool {
        false
    }
}
