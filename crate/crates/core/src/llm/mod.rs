//! Chat-completion client contract.
//!
//! [`ChatClient`] is the only surface the synthesis code talks to. Two
//! implementations ship: [`HttpClient`] for a live OpenAI-compatible
//! endpoint and [`ReplayClient`], which serves recorded responses keyed
//! by a request digest so pipelines run offline and deterministically.

mod http;
mod replay;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::money::Money;

pub use http::{HttpClient, HttpConfig, RetryPolicy};
pub use replay::{RecordingClient, ReplayClient, ReplayEntry};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no recorded response for request digest {digest}")]
    ReplayMiss { digest: String },
    #[error("replay transcript line {line}: {message}")]
    ReplayFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub model_id: String,
    pub max_output_tokens: u32,
}

#[derive(Serialize)]
struct DigestKey<'a> {
    system_prompt: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    model_id: &'a str,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("messages must be non-empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over (system prompt, messages, temperature, model id).
    pub fn digest(&self) -> String {
        let key = DigestKey {
            system_prompt: &self.system_prompt,
            messages: &self.messages,
            temperature: self.temperature,
            model_id: &self.model_id,
        };
        let bytes = serde_json::to_vec(&key).expect("digest key serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

/// Runs `requests` with at most `max_in_flight` concurrent calls. The
/// result at index `i` belongs to `requests[i]` whatever the completion
/// order.
pub fn complete_all<C: ChatClient + ?Sized>(
    client: &C,
    requests: &[ChatRequest],
    max_in_flight: usize,
) -> Vec<Result<ChatResponse, LlmError>> {
    let workers = max_in_flight.clamp(1, requests.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<ChatResponse, LlmError>>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(req) = requests.get(i) else { break };
                let result = client.complete(req);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every slot is filled"))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPrice {
    pub per_prompt_token: Money,
    pub per_completion_token: Money,
}

/// Exact cost of the token usage in `responses`.
pub fn usage_cost(responses: &[ChatResponse], price: TokenPrice) -> Money {
    responses
        .iter()
        .map(|r| price.per_prompt_token * r.prompt_tokens + price.per_completion_token * r.completion_tokens)
        .sum()
}
