//! Reference-based creativity evaluation for machine-generated stories.
//!
//! The harness scores a candidate story against a designated reference story
//! on the 14-test Torrance Test of Creative Writing (TTCW) battery. Each test
//! is posed to an external judge model twice, once per presentation order, and
//! the two Likert verdicts are summed and binarized against a cutoff. Pass
//! counts (0–14) per candidate feed ranking-agreement metrics (Spearman,
//! Kendall's tau-b, pairwise accuracy) against human scores.
//!
//! Module map:
//! - [`domain`]: shared vocabulary types and dataset validation
//! - [`battery`]: the TTCW battery, Likert scales, prompt rendering, verdict parsing
//! - [`judge`]: chat-completion client with retries, plus deterministic mock backends
//! - [`engine`]: the double-trial protocol, scoring, runs, cutoff sweeps
//! - [`metrics`]: rank-agreement statistics against human assessments
//! - [`store`]: dataset files, the append-only trial log, report export
//! - [`fixtures`]: deterministic mock-judge fixtures for tests and demos

pub mod battery;
pub mod domain;
pub mod engine;
pub mod fixtures;
pub mod judge;
pub mod metrics;
pub mod store;

pub use battery::{load_battery, make_scale, parse_binary, parse_verdict, render_prompt, PromptBundle};
pub use domain::{
    CandidateScore, EngineConfig, EvalDataset, EvalMode, HumanScale, LikertScale, PlotEntry,
    TestOutcome, TestSpec, TrialKey, TrialOrder, TrialRecord, Verdict,
};
pub use engine::{binarize, run_dataset, sweep_cutoff, EvalRunResult};
pub use judge::{JudgeClient, JudgeError, JudgeRequest, JudgeResponse};
pub use metrics::{build_report, kendall, pairwise_stats, spearman, RankingReport};
pub use store::{load_dataset, TrialStore};
