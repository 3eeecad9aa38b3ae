//! The canonical 14-test TTCW battery, Likert scale construction, prompt
//! rendering for every evaluation mode, and verdict/label parsing.
//!
//! Everything here is a pure function over immutable inputs.

use std::fmt;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{
    CandidatePosition, Dimension, EvalMode, LikertLevel, LikertScale, TestSpec, Verdict,
};

/// Number of tests in the canonical battery.
pub const BATTERY_SIZE: usize = 14;

/// The 14 TTCW questions in canonical table order: 5 Fluency, 3 Flexibility,
/// 3 Originality, 3 Elaboration.
const TTCW_QUESTIONS: [(Dimension, &str); BATTERY_SIZE] = [
    (
        Dimension::Fluency,
        "Does the end of the story feel natural and earned, as opposed to arbitrary or abrupt?",
    ),
    (
        Dimension::Fluency,
        "Do the different elements of the story work together to form a unified, engaging, and satisfying whole?",
    ),
    (
        Dimension::Fluency,
        "Does the story have an appropriate balance between scene and summary/exposition, or does it rely too heavily on one element?",
    ),
    (
        Dimension::Fluency,
        "Does the manipulation of time (compression or stretching) feel appropriate and balanced?",
    ),
    (
        Dimension::Fluency,
        "Does the story make sophisticated use of idiom, metaphor, or literary allusion?",
    ),
    (
        Dimension::Flexibility,
        "Does the story achieve a good balance between interiority and exteriority, in a way that feels emotionally flexible?",
    ),
    (
        Dimension::Flexibility,
        "Does the story contain turns that are both surprising and appropriate?",
    ),
    (
        Dimension::Flexibility,
        "Does the story provide diverse perspectives, and if there are unlikeable characters, are their perspectives presented convincingly and accurately?",
    ),
    (
        Dimension::Originality,
        "Is the story an original piece of writing without any clichés?",
    ),
    (
        Dimension::Originality,
        "Does the story show originality in its form and/or structure?",
    ),
    (
        Dimension::Originality,
        "Will an average reader of this story obtain a unique and original idea from reading it?",
    ),
    (
        Dimension::Elaboration,
        "Are there passages in the story that involve subtext, and if so, does the subtext enrich the setting or feel forced?",
    ),
    (
        Dimension::Elaboration,
        "Does the writer make the fictional world believable at the sensory level?",
    ),
    (
        Dimension::Elaboration,
        "Does each character feel developed with appropriate complexity, ensuring no character exists solely for plot convenience?",
    ),
];

#[derive(Debug, Error)]
pub enum BatteryError {
    #[error("unsupported Likert granularity {0}; expected 3, 5, or 7")]
    UnsupportedGranularity(u8),
    #[error("story text must be non-empty")]
    EmptyStory,
    #[error("token {0:?} does not belong to the {1}-point scale")]
    UnknownToken(String, u8),
    #[error("no verdict token found in judge response")]
    NoVerdictToken { raw_response: String },
    #[error("no True/False answer found in judge response")]
    NoBinaryToken { raw_response: String },
    #[error("invalid battery file: {0}")]
    InvalidBattery(String),
    #[error("failed to read battery file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse battery file {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Returns the canonical battery. The output is identical on every call.
pub fn load_battery() -> Vec<TestSpec> {
    TTCW_QUESTIONS
        .iter()
        .enumerate()
        .map(|(i, (dimension, question))| TestSpec {
            test_id: (i + 1) as u8,
            dimension: *dimension,
            question: (*question).to_string(),
            background: None,
        })
        .collect()
}

/// Builds the Likert scale for a granularity in {3, 5, 7}.
///
/// Tokens keep the double-bracket syntax across granularities so one parser
/// serves all scales: the 3-point scale drops the "significantly" levels and
/// the 7-point scale adds a "far better" level at ±3.
pub fn make_scale(granularity: u8) -> Result<LikertScale, BatteryError> {
    let levels: Vec<(&str, &str, i32)> = match granularity {
        3 => vec![
            ("[[A>B]]", "Story A is better", 1),
            ("[[A=B]]", "Tie, relatively the same", 0),
            ("[[B>A]]", "Story B is better", -1),
        ],
        5 => vec![
            ("[[A>>B]]", "Story A is significantly better", 2),
            ("[[A>B]]", "Story A is slightly better", 1),
            ("[[A=B]]", "Tie, relatively the same", 0),
            ("[[B>A]]", "Story B is slightly better", -1),
            ("[[B>>A]]", "Story B is significantly better", -2),
        ],
        7 => vec![
            ("[[A>>>B]]", "Story A is far better", 3),
            ("[[A>>B]]", "Story A is significantly better", 2),
            ("[[A>B]]", "Story A is slightly better", 1),
            ("[[A=B]]", "Tie, relatively the same", 0),
            ("[[B>A]]", "Story B is slightly better", -1),
            ("[[B>>A]]", "Story B is significantly better", -2),
            ("[[B>>>A]]", "Story B is far better", -3),
        ],
        other => return Err(BatteryError::UnsupportedGranularity(other)),
    };
    Ok(LikertScale {
        granularity,
        levels: levels
            .into_iter()
            .map(|(token, label, value)| LikertLevel {
                token: token.to_string(),
                label: label.to_string(),
                a_relative_value: value,
            })
            .collect(),
    })
}

/// A rendered judge prompt plus a stable hash of its full text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub prompt_hash: String,
}

fn hash_prompt(system_text: &str, user_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(system_text.as_bytes());
    hasher.update([0u8]);
    hasher.update(user_text.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        use fmt::Write;
        write!(out, "{byte:02x}").expect("writing to String cannot fail");
    }
    out
}

const PAIR_CRITIC_ROLE: &str = "Please act as an experienced and impartial literary critic to evaluate the creativity of two stories. You will be provided with two stories, Story A and Story B. You will then be given some background knowledge on specific aspects of creative writing. Carefully read both stories and, using the provided background knowledge, critically analyze them for their creativity.";

const SINGLE_CRITIC_ROLE: &str = "Please act as an experienced and impartial literary critic to evaluate the creativity of a story. You will be provided with one story. You will then be given some background knowledge on specific aspects of creative writing. Carefully read the story and, using the provided background knowledge, critically analyze it for its creativity.";

fn verdict_menu(scale: &LikertScale) -> String {
    scale
        .levels
        .iter()
        .enumerate()
        .map(|(i, level)| format!("{}. {}: {}", i + 1, level.label, level.token))
        .collect::<Vec<_>>()
        .join("\n")
}

fn reminder_line(scale: &LikertScale) -> String {
    format!(
        "Remember, you must end your answer with one of these: {}",
        scale.tokens().collect::<Vec<_>>().join(", ")
    )
}

fn question_block(test: &TestSpec) -> String {
    match &test.background {
        Some(background) if !background.trim().is_empty() => {
            format!("Question: {}\n\nBackground: {}", test.question, background)
        }
        _ => format!("Question: {}", test.question),
    }
}

fn pair_story_block(story_a: &str, story_b: &str) -> String {
    format!(
        "[The Start of Story A]\n{story_a}\n[The End of Story A]\n\n[The Start of Story B]\n{story_b}\n[The End of Story B]"
    )
}

fn single_story_block(story: &str) -> String {
    format!("[The Start of Story]\n{story}\n[The End of Story]")
}

/// Renders the judge prompt for one test under one evaluation mode.
///
/// Reference modes require both stories; single modes ignore `story_b`.
/// The hash changes iff any rendered byte changes.
pub fn render_prompt(
    test: &TestSpec,
    story_a: &str,
    story_b: &str,
    scale: &LikertScale,
    mode: EvalMode,
) -> Result<PromptBundle, BatteryError> {
    if story_a.trim().is_empty() || (mode.is_reference() && story_b.trim().is_empty()) {
        return Err(BatteryError::EmptyStory);
    }

    let (system_text, user_text) = match mode {
        EvalMode::ReferenceAnalyzeRate => (
            PAIR_CRITIC_ROLE.to_string(),
            format!(
                "Think step by step, and describe your thought process using concise phrases. After providing your analysis, you must conclude by outputting only one of the following choices as your final verdict with a label:\n\n{menu}\n\nExample output: \"A: narrative ending, ... B: poor character development, ... Therefore: [[A>B]]\".\n\n{stories}\n\n{question}\n\n{reminder}",
                menu = verdict_menu(scale),
                stories = pair_story_block(story_a, story_b),
                question = question_block(test),
                reminder = reminder_line(scale),
            ),
        ),
        EvalMode::ReferenceDirect => (
            PAIR_CRITIC_ROLE.to_string(),
            format!(
                "You must output only one of the following choices as your final verdict with a label, without any analysis or explanation:\n\n{menu}\n\n{stories}\n\n{question}\n\n{reminder}",
                menu = verdict_menu(scale),
                stories = pair_story_block(story_a, story_b),
                question = question_block(test),
                reminder = reminder_line(scale),
            ),
        ),
        EvalMode::SingleAnalyzeRate => (
            SINGLE_CRITIC_ROLE.to_string(),
            format!(
                "Think step by step, and describe your thought process using concise phrases. After providing your analysis, you must conclude by answering the question about the story with \"True\" or \"False\".\n\n{story}\n\n{question}\n\nRemember, you must end your answer with either True or False.",
                story = single_story_block(story_a),
                question = question_block(test),
            ),
        ),
        EvalMode::SingleDirect => (
            SINGLE_CRITIC_ROLE.to_string(),
            format!(
                "Answer the question about the story with only \"True\" or \"False\", without any analysis or explanation.\n\n{story}\n\n{question}\n\nRemember, you must end your answer with either True or False.",
                story = single_story_block(story_a),
                question = question_block(test),
            ),
        ),
    };

    let prompt_hash = hash_prompt(&system_text, &user_text);
    Ok(PromptBundle { system_text, user_text, prompt_hash })
}

/// Extracts the verdict token from a judge response: the LAST occurrence of
/// any scale token wins, since the prompt demands the verdict at the end and
/// responses may mention tokens mid-analysis.
pub fn parse_verdict<'a>(response: &str, scale: &'a LikertScale) -> Result<&'a str, BatteryError> {
    let mut best: Option<(usize, &LikertLevel)> = None;
    for level in &scale.levels {
        if let Some(pos) = response.rfind(level.token.as_str()) {
            if best.is_none_or(|(p, _)| pos > p) {
                best = Some((pos, level));
            }
        }
    }
    best.map(|(_, level)| level.token.as_str())
        .ok_or_else(|| BatteryError::NoVerdictToken { raw_response: response.to_string() })
}

/// Extracts the last whole-word True/False answer (case-insensitive) from a
/// single-mode response. Only those two words are accepted.
pub fn parse_binary(response: &str) -> Result<bool, BatteryError> {
    let lower = response.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let whole_word = |start: usize, len: usize| -> bool {
        let before_ok = start == 0 || !bytes[start - 1].is_ascii_alphanumeric();
        let end = start + len;
        let after_ok = end == bytes.len() || !bytes[end].is_ascii_alphanumeric();
        before_ok && after_ok
    };
    let last_match = |word: &str| -> Option<usize> {
        let mut from = lower.len();
        while let Some(pos) = lower[..from].rfind(word) {
            if whole_word(pos, word.len()) {
                return Some(pos);
            }
            from = pos;
        }
        None
    };
    match (last_match("true"), last_match("false")) {
        (Some(t), Some(f)) => Ok(t > f),
        (Some(_), None) => Ok(true),
        (None, Some(_)) => Ok(false),
        (None, None) => Err(BatteryError::NoBinaryToken { raw_response: response.to_string() }),
    }
}

/// Turns a scale token into a full verdict for the given candidate position:
/// `candidate_favoring` equals the A-relative value when the candidate sat at
/// A and its negation when the candidate sat at B.
pub fn map_verdict(
    token: &str,
    candidate_position: CandidatePosition,
    scale: &LikertScale,
) -> Result<Verdict, BatteryError> {
    let level = scale
        .level_for_token(token)
        .ok_or_else(|| BatteryError::UnknownToken(token.to_string(), scale.granularity))?;
    let candidate_favoring = match candidate_position {
        CandidatePosition::A => level.a_relative_value,
        CandidatePosition::B => -level.a_relative_value,
    };
    Ok(Verdict {
        raw_token: level.token.clone(),
        a_relative_value: level.a_relative_value,
        candidate_position,
        candidate_favoring,
    })
}

#[derive(Debug, Deserialize)]
struct BatteryFileEntry {
    test_id: u8,
    dimension: Dimension,
    question: String,
    #[serde(default)]
    background: Option<String>,
}

/// Loads a battery override file: a JSON list of
/// `{test_id, dimension, question, background?}`.
///
/// With `strict_counts` the file must reproduce the canonical structure
/// (14 tests: 5 Fluency, 3 Flexibility, 3 Originality, 3 Elaboration);
/// without it any non-empty battery with contiguous ids is accepted.
pub fn load_battery_file(path: &Path, strict_counts: bool) -> Result<Vec<TestSpec>, BatteryError> {
    let text = std::fs::read_to_string(path).map_err(|source| BatteryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let entries: Vec<BatteryFileEntry> =
        serde_json::from_str(&text).map_err(|source| BatteryError::Json {
            path: path.display().to_string(),
            source,
        })?;
    let battery: Vec<TestSpec> = entries
        .into_iter()
        .map(|e| TestSpec {
            test_id: e.test_id,
            dimension: e.dimension,
            question: e.question,
            background: e.background,
        })
        .collect();
    validate_battery(&battery, strict_counts)?;
    Ok(battery)
}

/// Checks battery well-formedness: ids are exactly 1..=n in order, questions
/// non-empty; with `strict_counts`, also the canonical 14/5-3-3-3 structure.
pub fn validate_battery(battery: &[TestSpec], strict_counts: bool) -> Result<(), BatteryError> {
    if battery.is_empty() {
        return Err(BatteryError::InvalidBattery("battery must contain at least one test".into()));
    }
    for (i, test) in battery.iter().enumerate() {
        if usize::from(test.test_id) != i + 1 {
            return Err(BatteryError::InvalidBattery(format!(
                "test ids must be contiguous from 1; entry {} has test_id {}",
                i, test.test_id
            )));
        }
        if test.question.trim().is_empty() {
            return Err(BatteryError::InvalidBattery(format!(
                "test {} has an empty question",
                test.test_id
            )));
        }
    }
    if strict_counts {
        let count = |d: Dimension| battery.iter().filter(|t| t.dimension == d).count();
        let shape = (
            battery.len(),
            count(Dimension::Fluency),
            count(Dimension::Flexibility),
            count(Dimension::Originality),
            count(Dimension::Elaboration),
        );
        if shape != (14, 5, 3, 3, 3) {
            return Err(BatteryError::InvalidBattery(format!(
                "expected 14 tests split 5/3/3/3 across Fluency/Flexibility/Originality/Elaboration, got {}/{}/{}/{}/{}",
                shape.0, shape.1, shape.2, shape.3, shape.4
            )));
        }
    }
    Ok(())
}
