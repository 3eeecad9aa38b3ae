//! Shared vocabulary types: datasets, tests, scales, verdicts, scores, config.
//!
//! Values are immutable after construction and safe to share across threads.
//! System ids are opaque strings; nothing here special-cases model names, so a
//! machine-generated story can serve as the reference.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// The four TTCW creativity dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Fluency,
    Flexibility,
    Originality,
    Elaboration,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dimension::Fluency => write!(f, "Fluency"),
            Dimension::Flexibility => write!(f, "Flexibility"),
            Dimension::Originality => write!(f, "Originality"),
            Dimension::Elaboration => write!(f, "Elaboration"),
        }
    }
}

/// One TTCW test: a yes/no question about a finished story, tagged with its
/// creativity dimension. `background` is optional explanatory text inserted
/// into the prompt when present; the canonical battery ships questions only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub test_id: u8,
    pub dimension: Dimension,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
}

/// What the dataset's human scores mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    /// 0–14 TTCW pass counts.
    TtcwPassCount,
    /// An arbitrary numeric rating scale (e.g. 10-point).
    Numeric,
}

/// Human scoring scale descriptor for a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanScale {
    pub kind: ScaleKind,
    pub max_value: f64,
}

impl HumanScale {
    pub fn ttcw() -> Self {
        HumanScale { kind: ScaleKind::TtcwPassCount, max_value: 14.0 }
    }

    pub fn numeric(max_value: f64) -> Self {
        HumanScale { kind: ScaleKind::Numeric, max_value }
    }
}

/// One storyline: a set of stories by different systems for the same plot,
/// with one system designated as the reference, plus human scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotEntry {
    pub plot_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_text: Option<String>,
    pub reference_system: String,
    pub texts: BTreeMap<String, String>,
    #[serde(default)]
    pub human_scores: BTreeMap<String, f64>,
}

impl PlotEntry {
    /// System ids other than the reference, in sorted order.
    pub fn candidate_systems(&self) -> Vec<&str> {
        self.texts
            .keys()
            .filter(|s| **s != self.reference_system)
            .map(|s| s.as_str())
            .collect()
    }
}

/// A full evaluation dataset: plots, per-system story texts, and human scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDataset {
    pub dataset_id: String,
    pub scale: HumanScale,
    pub plots: Vec<PlotEntry>,
}

impl EvalDataset {
    pub fn plot(&self, plot_id: &str) -> Option<&PlotEntry> {
        self.plots.iter().find(|p| p.plot_id == plot_id)
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_dataset(self)
    }
}

/// A broken dataset invariant. Violations are data, not failures: validation
/// always returns the full list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub message: String,
}

impl Violation {
    fn dataset(message: impl Into<String>) -> Self {
        Violation { plot_id: None, system: None, message: message.into() }
    }

    fn plot(plot_id: &str, message: impl Into<String>) -> Self {
        Violation { plot_id: Some(plot_id.to_string()), system: None, message: message.into() }
    }

    fn system(plot_id: &str, system: &str, message: impl Into<String>) -> Self {
        Violation {
            plot_id: Some(plot_id.to_string()),
            system: Some(system.to_string()),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.plot_id, &self.system) {
            (Some(p), Some(s)) => write!(f, "plot {p:?} system {s:?}: {}", self.message),
            (Some(p), None) => write!(f, "plot {p:?}: {}", self.message),
            _ => write!(f, "dataset: {}", self.message),
        }
    }
}

/// Checks every dataset invariant and returns all violations found.
///
/// The "at least two candidates per plot" requirement is deliberately not
/// checked here: it only binds when the dataset feeds ranking metrics, and
/// datasets being assembled by `generate` may legitimately hold fewer texts.
/// `metrics::build_report` enforces it at ranking time.
pub fn validate_dataset(dataset: &EvalDataset) -> Vec<Violation> {
    let mut out = Vec::new();

    if dataset.dataset_id.trim().is_empty() {
        out.push(Violation::dataset("dataset_id must be non-empty"));
    }
    if !(dataset.scale.max_value.is_finite() && dataset.scale.max_value > 0.0) {
        out.push(Violation::dataset(format!(
            "scale max_value must be a positive number, got {}",
            dataset.scale.max_value
        )));
    }
    if dataset.scale.kind == ScaleKind::TtcwPassCount && dataset.scale.max_value != 14.0 {
        out.push(Violation::dataset(format!(
            "ttcw_pass_count scale requires max_value 14, got {}",
            dataset.scale.max_value
        )));
    }

    let mut seen = std::collections::BTreeSet::new();
    for plot in &dataset.plots {
        let pid = plot.plot_id.as_str();
        if pid.trim().is_empty() {
            out.push(Violation::plot(pid, "plot_id must be non-empty"));
        }
        if !seen.insert(pid) {
            out.push(Violation::plot(pid, "duplicate plot_id"));
        }
        if !plot.texts.contains_key(&plot.reference_system) {
            out.push(Violation::plot(
                pid,
                format!("reference_system {:?} has no text entry", plot.reference_system),
            ));
        }
        for (system, text) in &plot.texts {
            if system.trim().is_empty() {
                out.push(Violation::system(pid, system, "system id must be non-empty"));
            }
            if text.split_whitespace().next().is_none() {
                out.push(Violation::system(pid, system, "story text must contain at least one word"));
            }
        }
        for (system, score) in &plot.human_scores {
            if !plot.texts.contains_key(system) {
                out.push(Violation::system(pid, system, "human score for a system with no text"));
            }
            if !score.is_finite() || *score < 0.0 {
                out.push(Violation::system(
                    pid,
                    system,
                    format!("human score must be a non-negative number, got {score}"),
                ));
            } else if *score > dataset.scale.max_value {
                out.push(Violation::system(
                    pid,
                    system,
                    format!("human score {score} exceeds scale maximum {}", dataset.scale.max_value),
                ));
            }
        }
    }
    out
}

/// One level of a Likert preference scale. Values are A-relative: positive
/// means Story A preferred.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertLevel {
    pub token: String,
    pub label: String,
    pub a_relative_value: i32,
}

/// An ordered Likert scale with double-bracket verdict tokens, symmetric
/// around a single tie level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertScale {
    pub granularity: u8,
    /// Levels in menu order, strictly decreasing in `a_relative_value`.
    pub levels: Vec<LikertLevel>,
}

impl LikertScale {
    /// The magnitude of the strongest preference level (2 for the 5-point scale).
    pub fn max_level(&self) -> i32 {
        self.levels.iter().map(|l| l.a_relative_value).max().unwrap_or(0)
    }

    /// Two-trial combined scores live in `[-2m, +2m]`.
    pub fn combined_range(&self) -> std::ops::RangeInclusive<i32> {
        let m = self.max_level();
        -2 * m..=2 * m
    }

    pub fn level_for_token(&self, token: &str) -> Option<&LikertLevel> {
        self.levels.iter().find(|l| l.token == token)
    }

    pub fn token_for_value(&self, a_relative_value: i32) -> Option<&str> {
        self.levels
            .iter()
            .find(|l| l.a_relative_value == a_relative_value)
            .map(|l| l.token.as_str())
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.levels.iter().map(|l| l.token.as_str())
    }
}

/// Which story slot the candidate occupied in a trial prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CandidatePosition {
    A,
    B,
}

/// A parsed judge verdict, re-signed so `candidate_favoring` is positive when
/// the candidate is preferred regardless of presentation position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub raw_token: String,
    pub a_relative_value: i32,
    pub candidate_position: CandidatePosition,
    pub candidate_favoring: i32,
}

/// Presentation order of a reference-mode trial. Single-text trials carry
/// `CandidateFirst` (only the candidate is shown).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialOrder {
    ReferenceFirst,
    CandidateFirst,
}

impl fmt::Display for TrialOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrialOrder::ReferenceFirst => write!(f, "reference_first"),
            TrialOrder::CandidateFirst => write!(f, "candidate_first"),
        }
    }
}

/// Evaluation strategy. Reference modes compare candidate vs reference and
/// produce Likert verdicts; single modes judge the candidate alone and
/// produce binary labels. Analyze-rate modes ask for an analysis before the
/// final answer; direct modes ask for the answer only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    ReferenceAnalyzeRate,
    ReferenceDirect,
    SingleAnalyzeRate,
    SingleDirect,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [
        EvalMode::ReferenceAnalyzeRate,
        EvalMode::ReferenceDirect,
        EvalMode::SingleAnalyzeRate,
        EvalMode::SingleDirect,
    ];

    pub fn is_reference(self) -> bool {
        matches!(self, EvalMode::ReferenceAnalyzeRate | EvalMode::ReferenceDirect)
    }

    pub fn is_analyze_rate(self) -> bool {
        matches!(self, EvalMode::ReferenceAnalyzeRate | EvalMode::SingleAnalyzeRate)
    }

    /// Kebab-case name used on the command line.
    pub fn flag_name(self) -> &'static str {
        match self {
            EvalMode::ReferenceAnalyzeRate => "reference-analyze-rate",
            EvalMode::ReferenceDirect => "reference-direct",
            EvalMode::SingleAnalyzeRate => "single-analyze-rate",
            EvalMode::SingleDirect => "single-direct",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag_name())
    }
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        EvalMode::ALL
            .into_iter()
            .find(|m| m.flag_name() == norm)
            .ok_or_else(|| format!("unknown eval mode {s:?}"))
    }
}

/// The identity of one judge call. Trial records with equal keys are the same
/// trial; the cutoff is deliberately absent (binarization is post-hoc).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialKey {
    pub dataset_id: String,
    pub plot_id: String,
    pub candidate_system: String,
    pub test_id: u8,
    pub order: TrialOrder,
    pub mode: EvalMode,
    pub scale_granularity: u8,
    pub judge_model: String,
}

impl fmt::Display for TrialKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/t{}/{}/{}/{}pt/{}",
            self.dataset_id,
            self.plot_id,
            self.candidate_system,
            self.test_id,
            self.order,
            self.mode,
            self.scale_granularity,
            self.judge_model
        )
    }
}

/// One judge call: prompt provenance, raw response, and the parsed result.
/// Exactly one of `verdict` (reference modes) and `binary_label` (single
/// modes) is populated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    #[serde(flatten)]
    pub key: TrialKey,
    pub prompt_hash: String,
    pub raw_response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_label: Option<bool>,
    pub created_at: DateTime<Utc>,
}

impl TrialRecord {
    /// Checks the exactly-one-result invariant against the key's mode.
    pub fn check(&self) -> Result<(), String> {
        match (self.key.mode.is_reference(), &self.verdict, &self.binary_label) {
            (true, Some(_), None) => Ok(()),
            (false, None, Some(_)) => Ok(()),
            (true, _, Some(_)) => Err("reference-mode trial must carry a verdict, not a binary label".into()),
            (true, None, None) => Err("reference-mode trial is missing its verdict".into()),
            (false, Some(_), _) => Err("single-mode trial must carry a binary label, not a verdict".into()),
            (false, None, None) => Err("single-mode trial is missing its binary label".into()),
        }
    }
}

/// Result of one TTCW test for one candidate. `combined_score` is the sum of
/// the two trials' candidate-favoring values in reference modes and absent in
/// single modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test_id: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined_score: Option<i32>,
    pub passed: bool,
}

/// A candidate's full battery result for one plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub plot_id: String,
    pub candidate_system: String,
    pub passes: u32,
    pub per_test: Vec<TestOutcome>,
}

/// Engine configuration. `parallelism` is an execution knob that cannot
/// change results, so it is excluded from serialized snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub cutoff: i32,
    pub scale_granularity: u8,
    pub mode: EvalMode,
    pub judge_model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default = "default_parallelism", skip_serializing)]
    pub parallelism: usize,
}

fn default_parallelism() -> usize {
    4
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            cutoff: -2,
            scale_granularity: 5,
            mode: EvalMode::ReferenceAnalyzeRate,
            judge_model: "mock".to_string(),
            temperature: 0.0,
            max_tokens: 1024,
            parallelism: default_parallelism(),
        }
    }
}

impl EngineConfig {
    /// Default cutoff for a granularity: minus the scale's strongest level,
    /// i.e. "slightly worse on average still passes".
    pub fn default_cutoff(granularity: u8) -> i32 {
        -(i32::from(granularity) / 2)
    }

    pub fn check(&self) -> Result<(), String> {
        if !matches!(self.scale_granularity, 3 | 5 | 7) {
            return Err(format!("unsupported scale granularity {}", self.scale_granularity));
        }
        let m = i32::from(self.scale_granularity) / 2;
        if self.cutoff < -2 * m || self.cutoff > 2 * m {
            return Err(format!(
                "cutoff {} outside combined-score range [{}, {}] for the {}-point scale",
                self.cutoff,
                -2 * m,
                2 * m,
                self.scale_granularity
            ));
        }
        if self.parallelism == 0 {
            return Err("parallelism must be at least 1".into());
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        if self.judge_model.trim().is_empty() {
            return Err("judge_model must be non-empty".into());
        }
        Ok(())
    }
}
