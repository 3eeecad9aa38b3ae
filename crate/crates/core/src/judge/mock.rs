//! Deterministic offline judge backends for tests and `--mock` runs.
//!
//! `MockJudge` reads quality markers planted in fixture story texts and turns
//! their difference into a verdict, so expected outcomes can be enumerated
//! exactly. Identical requests always produce byte-identical responses.

use std::sync::atomic::{AtomicI64, AtomicUsize, Ordering};
use std::time::Duration;

use super::{JudgeClient, JudgeError, JudgeRequest, JudgeResponse};
use crate::battery::load_battery;

/// Marker line prefix fixtures plant inside story texts: `QUALITY: 0.7` sets
/// the base quality, `QUALITY[3]: 0.9` overrides it for test 3.
pub const QUALITY_MARKER: &str = "QUALITY";

/// Half-width of the tie band on the quality difference.
const TIE_BAND: f64 = 0.05;
/// Width of each preference band beyond the tie band.
const LEVEL_BAND: f64 = 0.2;

/// Deterministic judge driven by quality markers in the prompt's story bodies.
///
/// For paired prompts it emits a verdict token from the quality difference
/// `d = q_A - q_B`: |d| <= 0.05 is a tie, then each 0.2-wide band steps one
/// preference level, clamped to the scale's strongest level (so at 5 points,
/// 0.05 < d <= 0.25 is "slightly better" and d > 0.25 "significantly
/// better"). For single-story prompts it answers True iff q >= 0.5.
#[derive(Debug, Default)]
pub struct MockJudge {
    calls: AtomicUsize,
}

impl MockJudge {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of completions served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Quality {
    base: Option<f64>,
    test_override: Option<f64>,
}

impl Quality {
    fn resolve(self) -> Option<f64> {
        self.test_override.or(self.base)
    }
}

fn extract_section<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = text.find(start)? + start.len();
    let e = text[s..].find(end)? + s;
    Some(&text[s..e])
}

/// Scans a story body for quality markers, keeping the override for
/// `test_id` when present.
fn scan_quality(story: &str, test_id: Option<u8>) -> Quality {
    let mut quality = Quality { base: None, test_override: None };
    for line in story.lines() {
        let line = line.trim();
        let Some(rest) = line.strip_prefix(QUALITY_MARKER) else { continue };
        if let Some(rest) = rest.strip_prefix('[') {
            let Some((id_part, value_part)) = rest.split_once("]:") else { continue };
            let (Ok(id), Ok(value)) = (id_part.trim().parse::<u8>(), value_part.trim().parse::<f64>())
            else {
                continue;
            };
            if Some(id) == test_id {
                quality.test_override = Some(value);
            }
        } else if let Some(value_part) = rest.strip_prefix(':') {
            if let Ok(value) = value_part.trim().parse::<f64>() {
                quality.base = Some(value);
            }
        }
    }
    quality
}

/// Which canonical test the prompt is asking about, recovered by matching
/// question text. Per-test overrides only apply on the canonical battery.
fn detect_test_id(prompt: &str) -> Option<u8> {
    load_battery()
        .iter()
        .find(|t| prompt.contains(t.question.as_str()))
        .map(|t| t.test_id)
}

fn detect_granularity(prompt: &str) -> u8 {
    if prompt.contains("[[A>>>B]]") {
        7
    } else if prompt.contains("[[A>>B]]") {
        5
    } else {
        3
    }
}

/// Maps a quality difference to an A-relative preference level in
/// `[-max_level, max_level]`.
fn preference_level(d: f64, max_level: i32) -> i32 {
    if d.abs() <= TIE_BAND {
        return 0;
    }
    let steps = ((d.abs() - TIE_BAND) / LEVEL_BAND).ceil() as i32;
    steps.min(max_level) * d.signum() as i32
}

impl JudgeClient for MockJudge {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.check().map_err(|message| JudgeError::Protocol { message })?;
        let prompt = request.user_text();
        let test_id = detect_test_id(prompt);

        let text = if let (Some(story_a), Some(story_b)) = (
            extract_section(prompt, "[The Start of Story A]", "[The End of Story A]"),
            extract_section(prompt, "[The Start of Story B]", "[The End of Story B]"),
        ) {
            let q_a = scan_quality(story_a, test_id).resolve().ok_or_else(|| JudgeError::Protocol {
                message: "story A carries no QUALITY marker".into(),
            })?;
            let q_b = scan_quality(story_b, test_id).resolve().ok_or_else(|| JudgeError::Protocol {
                message: "story B carries no QUALITY marker".into(),
            })?;
            let granularity = detect_granularity(prompt);
            let scale = crate::battery::make_scale(granularity)
                .map_err(|e| JudgeError::Protocol { message: e.to_string() })?;
            let level = preference_level(q_a - q_b, scale.max_level());
            let token = scale
                .token_for_value(level)
                .expect("preference level is clamped to the scale range")
                .to_string();
            format!(
                "A: pacing, imagery, command of voice. B: weighed on the same criteria. Therefore: {token}"
            )
        } else if let Some(story) = extract_section(prompt, "[The Start of Story]", "[The End of Story]") {
            let q = scan_quality(story, test_id).resolve().ok_or_else(|| JudgeError::Protocol {
                message: "story carries no QUALITY marker".into(),
            })?;
            let answer = if q >= 0.5 { "True" } else { "False" };
            format!("Analysis: coherence, imagery, development considered. Answer: {answer}")
        } else {
            return Err(JudgeError::Protocol {
                message: "prompt carries no recognizable story sections".into(),
            });
        };

        Ok(JudgeResponse {
            text,
            model: request.model.clone(),
            latency: Duration::ZERO,
            attempt_count: 1,
        })
    }
}

/// Judge that answers every request with one configured string.
#[derive(Debug)]
pub struct StaticJudge {
    text: String,
    calls: AtomicUsize,
}

impl StaticJudge {
    pub fn new(text: impl Into<String>) -> Self {
        StaticJudge { text: text.into(), calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl JudgeClient for StaticJudge {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(JudgeResponse {
            text: self.text.clone(),
            model: request.model.clone(),
            latency: Duration::ZERO,
            attempt_count: 1,
        })
    }
}

/// Judge that replays a fixed list of responses in order and fails once the
/// script is exhausted. Lets tests drive exact verdict sequences.
#[derive(Debug)]
pub struct ScriptedJudge {
    responses: Vec<String>,
    next: AtomicUsize,
}

impl ScriptedJudge {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        ScriptedJudge {
            responses: responses.into_iter().map(Into::into).collect(),
            next: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.next.load(Ordering::SeqCst).min(self.responses.len())
    }
}

impl JudgeClient for ScriptedJudge {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        let idx = self.next.fetch_add(1, Ordering::SeqCst);
        let text = self.responses.get(idx).ok_or_else(|| JudgeError::Protocol {
            message: format!("scripted judge exhausted after {} response(s)", self.responses.len()),
        })?;
        Ok(JudgeResponse {
            text: text.clone(),
            model: request.model.clone(),
            latency: Duration::ZERO,
            attempt_count: 1,
        })
    }
}

/// Fault-injection wrapper: passes through a fixed number of completions,
/// then fails every later call with a transport error. Used to simulate an
/// interrupted run for resume testing.
pub struct FailAfter<J> {
    inner: J,
    remaining: AtomicI64,
}

impl<J: JudgeClient> FailAfter<J> {
    pub fn new(inner: J, successes: u64) -> Self {
        FailAfter { inner, remaining: AtomicI64::new(successes as i64) }
    }
}

impl<J: JudgeClient> JudgeClient for FailAfter<J> {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        if self.remaining.fetch_sub(1, Ordering::SeqCst) <= 0 {
            return Err(JudgeError::Transport { message: "injected fault".into(), attempts: 1 });
        }
        self.inner.complete(request)
    }
}
