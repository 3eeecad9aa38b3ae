//! Live chat-completion client over HTTP with exponential-backoff retries.

use std::time::{Duration, Instant};

use rand::Rng;

use super::{JudgeClient, JudgeError, JudgeRequest, JudgeResponse};

/// Retry behavior for transient failures: exponential backoff with jitter.
/// A 429 with a `Retry-After` header sleeps the server-provided delay instead.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
    pub max_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            max_delay: Duration::from_secs(30),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts. Intended for tests and stub servers.
    pub fn immediate() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::ZERO,
            factor: 2.0,
            max_delay: Duration::ZERO,
            jitter: false,
        }
    }

    fn delay_for(&self, attempt: u32) -> Duration {
        let exp = self.base_delay.as_secs_f64() * self.factor.powi(attempt.saturating_sub(1) as i32);
        let capped = exp.min(self.max_delay.as_secs_f64());
        let with_jitter = if self.jitter && capped > 0.0 {
            capped * rand::thread_rng().gen_range(0.75..=1.25)
        } else {
            capped
        };
        Duration::from_secs_f64(with_jitter)
    }
}

/// Client for any endpoint speaking the `POST /chat/completions` JSON shape:
/// request `{model, messages, temperature, max_tokens}`, response carrying
/// `choices[0].message.content`.
pub struct HttpJudge {
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

/// Name of the environment variable holding the judge API credential.
pub const API_KEY_ENV: &str = "JUDGE_API_KEY";

enum AttemptError {
    Retryable { message: String, retry_after: Option<Duration> },
    Permanent { status: u16, message: String },
    Protocol { message: String },
}

impl HttpJudge {
    /// Creates a client for `base_url`, reading the API key from
    /// `JUDGE_API_KEY` when set.
    pub fn new(base_url: impl Into<String>) -> Self {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_key(base_url, api_key)
    }

    pub fn with_key(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        let mut base_url = base_url.into();
        while base_url.ends_with('/') {
            base_url.pop();
        }
        HttpJudge {
            base_url,
            api_key,
            retry: RetryPolicy::default(),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(300))
                .build(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }

    fn attempt(&self, body: &str) -> Result<String, AttemptError> {
        let mut request = self
            .agent
            .post(&self.endpoint())
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }

        let response = match request.send_string(body) {
            Ok(response) => response,
            Err(ureq::Error::Status(status, response)) => {
                let retry_after = response
                    .header("Retry-After")
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs);
                let detail = response.into_string().unwrap_or_default();
                let message = format!("HTTP {status}: {}", truncate(&detail, 300));
                return if status == 429 || (500..600).contains(&status) {
                    Err(AttemptError::Retryable { message, retry_after })
                } else {
                    Err(AttemptError::Permanent { status, message })
                };
            }
            Err(ureq::Error::Transport(t)) => {
                return Err(AttemptError::Retryable { message: t.to_string(), retry_after: None })
            }
        };

        let text = response
            .into_string()
            .map_err(|e| AttemptError::Retryable { message: format!("failed to read body: {e}"), retry_after: None })?;
        if text.trim().is_empty() {
            return Err(AttemptError::Retryable { message: "empty response body".into(), retry_after: None });
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| AttemptError::Protocol {
            message: format!("response body is not JSON: {e}"),
        })?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| AttemptError::Protocol {
                message: format!("missing choices[0].message.content in {}", truncate(&text, 300)),
            })?;
        if content.is_empty() {
            return Err(AttemptError::Retryable { message: "empty completion text".into(), retry_after: None });
        }
        Ok(content.to_string())
    }
}

impl JudgeClient for HttpJudge {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        request.check().map_err(|message| JudgeError::Protocol { message })?;
        let body = serde_json::to_string(request)
            .map_err(|e| JudgeError::Protocol { message: format!("failed to encode request: {e}") })?;

        let started = Instant::now();
        let mut last_message = String::new();
        for attempt in 1..=self.retry.max_attempts {
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(JudgeResponse {
                        text,
                        model: request.model.clone(),
                        latency: started.elapsed(),
                        attempt_count: attempt,
                    })
                }
                Err(AttemptError::Permanent { status, message }) => {
                    return Err(JudgeError::Permanent { status, message })
                }
                Err(AttemptError::Protocol { message }) => return Err(JudgeError::Protocol { message }),
                Err(AttemptError::Retryable { message, retry_after }) => {
                    last_message = message;
                    if attempt < self.retry.max_attempts {
                        std::thread::sleep(retry_after.unwrap_or_else(|| self.retry.delay_for(attempt)));
                    }
                }
            }
        }
        Err(JudgeError::Transport { message: last_message, attempts: self.retry.max_attempts })
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delays_grow_exponentially_and_cap() {
        let policy = RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(100),
            factor: 2.0,
            max_delay: Duration::from_millis(250),
            jitter: false,
        };
        assert_eq!(policy.delay_for(1), Duration::from_millis(100));
        assert_eq!(policy.delay_for(2), Duration::from_millis(200));
        assert_eq!(policy.delay_for(3), Duration::from_millis(250));
        assert_eq!(policy.delay_for(4), Duration::from_millis(250));
    }

    #[test]
    fn jitter_stays_within_band() {
        let policy = RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(100),
            factor: 2.0,
            max_delay: Duration::from_secs(10),
            jitter: true,
        };
        for _ in 0..50 {
            let d = policy.delay_for(1).as_secs_f64();
            assert!((0.075..=0.125).contains(&d), "delay {d} outside jitter band");
        }
    }

    #[test]
    fn trailing_slashes_are_stripped() {
        let judge = HttpJudge::with_key("http://localhost:9/v1///", None);
        assert_eq!(judge.endpoint(), "http://localhost:9/v1/chat/completions");
    }
}
