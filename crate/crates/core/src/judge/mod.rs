//! Abstraction over the external judge model: a chat-completion wire client
//! with retries, plus deterministic mock backends for offline testing.

mod http;
mod mock;

pub use http::{HttpJudge, RetryPolicy, API_KEY_ENV};
pub use mock::{FailAfter, MockJudge, ScriptedJudge, StaticJudge};

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::PromptBundle;
use crate::domain::EngineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// One chat-completion request to the judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl JudgeRequest {
    /// Builds a request from a rendered prompt and the judge parameters in the
    /// engine config. The prompt text is passed through byte-for-byte.
    pub fn from_bundle(bundle: &PromptBundle, config: &EngineConfig) -> Self {
        JudgeRequest {
            model: config.judge_model.clone(),
            messages: vec![
                Message { role: Role::System, content: bundle.system_text.clone() },
                Message { role: Role::User, content: bundle.user_text.clone() },
            ],
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err("request must contain at least one user message".into());
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return Err("message content must be non-empty".into());
        }
        Ok(())
    }

    /// The last user message, which carries the rendered evaluation prompt.
    pub fn user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

/// A successful judge completion.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeResponse {
    pub text: String,
    pub model: String,
    pub latency: Duration,
    pub attempt_count: u32,
}

#[derive(Debug, Error)]
pub enum JudgeError {
    /// Transient failure that survived every retry (connection errors,
    /// 429/5xx statuses, empty bodies).
    #[error("judge transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    /// Non-retryable HTTP failure (4xx other than 429).
    #[error("judge rejected the request (HTTP {status}): {message}")]
    Permanent { status: u16, message: String },
    /// The judge answered but not in the expected shape.
    #[error("judge protocol error: {message}")]
    Protocol { message: String },
}

/// A judge backend. Implementations are shareable across threads; in-flight
/// request count is capped by the engine, not here.
pub trait JudgeClient: Send + Sync {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError>;
}

impl<J: JudgeClient + ?Sized> JudgeClient for &J {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        (**self).complete(request)
    }
}
