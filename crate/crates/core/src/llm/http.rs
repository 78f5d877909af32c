use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatClient, ChatRequest, ChatResponse, LlmError, Role};

/// Exponential backoff for transient failures (429, 5xx, connection errors).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            initial_backoff_ms: 1_000,
            max_backoff_ms: 60_000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(attempt as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
            retry: RetryPolicy::default(),
        }
    }
}

/// Live client for OpenAI-compatible chat-completion endpoints.
pub struct HttpClient {
    http: Client,
    endpoint: String,
    api_key: String,
    retry: RetryPolicy,
}

enum Failure {
    Retryable(LlmError, Option<Duration>),
    Fatal(LlmError),
}

impl HttpClient {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: &HttpConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env)
            .map_err(|_| LlmError::Auth(format!("environment variable {} is not set", config.api_key_env)))?;
        Self::new(config, key)
    }

    pub fn new(config: &HttpConfig, api_key: String) -> Result<Self, LlmError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            http,
            endpoint: config.endpoint.clone(),
            api_key,
            retry: config.retry.clone(),
        })
    }

    fn body(request: &ChatRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        for m in &request.messages {
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": m.text}));
        }
        json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> Result<ChatResponse, Failure> {
        let resp = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| Failure::Retryable(LlmError::Transport(e.to_string()), None))?;
        let status = resp.status();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = resp
            .text()
            .map_err(|e| Failure::Retryable(LlmError::Transport(e.to_string()), None))?;

        match status {
            s if s.is_success() => parse_completion(&text).map_err(Failure::Fatal),
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => Err(Failure::Fatal(LlmError::Auth(text))),
            StatusCode::TOO_MANY_REQUESTS => Err(Failure::Retryable(LlmError::RateLimited { attempts: 0 }, retry_after)),
            s if s.is_server_error() => Err(Failure::Retryable(
                LlmError::Transport(format!("HTTP {s}: {text}")),
                retry_after,
            )),
            s => Err(Failure::Fatal(LlmError::Transport(format!("HTTP {s}: {text}")))),
        }
    }
}

fn parse_completion(body: &str) -> Result<ChatResponse, LlmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::Transport(format!("bad response body: {e}")))?;
    let text = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| LlmError::Transport("response has no choices[0].message.content".into()))?;
    Ok(ChatResponse {
        text: text.to_string(),
        prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    })
}

impl ChatClient for HttpClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let body = Self::body(request);
        let mut attempt = 0u32;
        loop {
            match self.attempt(&body) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(e, hint)) => {
                    if attempt >= self.retry.max_retries {
                        return Err(match e {
                            LlmError::RateLimited { .. } => LlmError::RateLimited { attempts: attempt + 1 },
                            other => other,
                        });
                    }
                    let cap = Duration::from_millis(self.retry.max_backoff_ms);
                    let delay = hint.map_or_else(|| self.retry.backoff(attempt), |h| h.min(cap));
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}
