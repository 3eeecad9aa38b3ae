//! Protocol execution: double trials with order alternation, combined-score
//! binarization, 0–14 scoring, and dataset-level orchestration.
//!
//! Each reference-mode test runs twice, reference shown first and then the
//! positions swapped, and the two candidate-favoring values are summed, so
//! positional bias cancels in expectation. Binarization against the cutoff is
//! a pure post-hoc function of the stored trials, which makes cutoff sweeps
//! free and runs resumable.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::battery::{
    load_battery, make_scale, map_verdict, parse_binary, parse_verdict, render_prompt,
    validate_battery, BatteryError,
};
use crate::domain::{
    validate_dataset, CandidatePosition, CandidateScore, EngineConfig, EvalDataset, LikertScale,
    TestOutcome, TestSpec, TrialKey, TrialOrder, TrialRecord, Verdict, Violation,
};
use crate::judge::{JudgeClient, JudgeError, JudgeRequest, Message, Role};
use crate::store::{StoreError, TrialStore};

/// How many times a trial re-asks the judge when the response parses to
/// nothing. Mirrors the transport retry budget.
const PARSE_ATTEMPTS: u32 = 5;

/// One failed trial: its identity and what went wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub key: TrialKey,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("dataset failed validation:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Precondition(Vec<Violation>),
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Battery(#[from] BatteryError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("test {test_id} failed: {message}")]
    TrialFailed { test_id: u8, message: String },
    #[error("candidate score incomplete; missing tests {missing_tests:?}")]
    PartialScore { missing_tests: Vec<u8> },
    #[error("run incomplete: {} of {} trials missing; rerun with the same trial store to resume", manifest.len(), total_trials)]
    Partial { manifest: Vec<TrialKey>, failures: Vec<TrialFailure>, total_trials: usize },
}

/// Outcome of one full evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRunResult {
    pub run_id: String,
    pub config: EngineConfig,
    /// One entry per (plot, non-reference system), sorted by plot then system.
    pub scores: Vec<CandidateScore>,
    /// Keys of every trial the run produced or reused, sorted.
    pub trial_refs: Vec<TrialKey>,
}

/// Pass/fail for a two-trial combined score: passed iff `combined_score >=
/// cutoff`.
pub fn binarize(combined_score: i32, cutoff: i32) -> bool {
    combined_score >= cutoff
}

struct TrialOutput {
    prompt_hash: String,
    raw_response: String,
    verdict: Option<Verdict>,
    binary_label: Option<bool>,
}

fn snippet(text: &str) -> String {
    let trimmed: String = text.chars().take(160).collect();
    if trimmed.len() < text.len() {
        format!("{trimmed}…")
    } else {
        trimmed
    }
}

/// Runs one judge call and parses it, re-asking on unparsable responses up to
/// the attempt budget. Judge-level errors (which already survived the
/// client's own retries) fail the trial immediately.
fn execute_trial(
    judge: &dyn JudgeClient,
    test: &TestSpec,
    reference_text: Option<&str>,
    candidate_text: &str,
    order: TrialOrder,
    scale: &LikertScale,
    config: &EngineConfig,
) -> Result<TrialOutput, String> {
    let bundle = if config.mode.is_reference() {
        let reference = reference_text.ok_or("reference text required in reference modes")?;
        let (story_a, story_b) = match order {
            TrialOrder::ReferenceFirst => (reference, candidate_text),
            TrialOrder::CandidateFirst => (candidate_text, reference),
        };
        render_prompt(test, story_a, story_b, scale, config.mode)
    } else {
        render_prompt(test, candidate_text, "", scale, config.mode)
    }
    .map_err(|e| e.to_string())?;

    let request = JudgeRequest::from_bundle(&bundle, config);
    let mut last_problem = String::new();
    for _ in 0..PARSE_ATTEMPTS {
        let response = judge.complete(&request).map_err(|e| e.to_string())?;
        if config.mode.is_reference() {
            match parse_verdict(&response.text, scale) {
                Ok(token) => {
                    let position = match order {
                        TrialOrder::ReferenceFirst => CandidatePosition::B,
                        TrialOrder::CandidateFirst => CandidatePosition::A,
                    };
                    let verdict = map_verdict(token, position, scale).map_err(|e| e.to_string())?;
                    return Ok(TrialOutput {
                        prompt_hash: bundle.prompt_hash,
                        raw_response: response.text,
                        verdict: Some(verdict),
                        binary_label: None,
                    });
                }
                Err(_) => {
                    last_problem = format!("no verdict token in response: {}", snippet(&response.text));
                }
            }
        } else {
            match parse_binary(&response.text) {
                Ok(label) => {
                    return Ok(TrialOutput {
                        prompt_hash: bundle.prompt_hash,
                        raw_response: response.text,
                        verdict: None,
                        binary_label: Some(label),
                    })
                }
                Err(_) => {
                    last_problem = format!("no True/False answer in response: {}", snippet(&response.text));
                }
            }
        }
    }
    Err(format!("{last_problem} (after {PARSE_ATTEMPTS} attempts)"))
}

fn combine_pair(first: &Verdict, second: &Verdict, cutoff: i32, test_id: u8) -> TestOutcome {
    let combined = first.candidate_favoring + second.candidate_favoring;
    TestOutcome { test_id, combined_score: Some(combined), passed: binarize(combined, cutoff) }
}

/// Runs one test as a double trial: reference first, then positions swapped.
/// The combined score is the sum of the two candidate-favoring values.
pub fn evaluate_pair(
    judge: &dyn JudgeClient,
    test: &TestSpec,
    reference_text: &str,
    candidate_text: &str,
    config: &EngineConfig,
) -> Result<TestOutcome, EngineError> {
    config.check().map_err(EngineError::InvalidConfig)?;
    if !config.mode.is_reference() {
        return Err(EngineError::InvalidArgument("evaluate_pair requires a reference mode".into()));
    }
    let scale = make_scale(config.scale_granularity)?;
    let mut verdicts = Vec::with_capacity(2);
    for order in [TrialOrder::ReferenceFirst, TrialOrder::CandidateFirst] {
        let output =
            execute_trial(judge, test, Some(reference_text), candidate_text, order, &scale, config)
                .map_err(|message| EngineError::TrialFailed { test_id: test.test_id, message })?;
        verdicts.push(output.verdict.expect("reference-mode trial produces a verdict"));
    }
    Ok(combine_pair(&verdicts[0], &verdicts[1], config.cutoff, test.test_id))
}

/// Runs one test as a single-text trial: the parsed True/False label is the
/// outcome and there is no combined score.
pub fn evaluate_single(
    judge: &dyn JudgeClient,
    test: &TestSpec,
    candidate_text: &str,
    config: &EngineConfig,
) -> Result<TestOutcome, EngineError> {
    config.check().map_err(EngineError::InvalidConfig)?;
    if config.mode.is_reference() {
        return Err(EngineError::InvalidArgument("evaluate_single requires a single mode".into()));
    }
    let scale = make_scale(config.scale_granularity)?;
    let output = execute_trial(judge, test, None, candidate_text, TrialOrder::CandidateFirst, &scale, config)
        .map_err(|message| EngineError::TrialFailed { test_id: test.test_id, message })?;
    Ok(TestOutcome {
        test_id: test.test_id,
        combined_score: None,
        passed: output.binary_label.expect("single-mode trial produces a label"),
    })
}

/// Scores one candidate on the full canonical battery, without a trial store.
pub fn score_candidate(
    judge: &dyn JudgeClient,
    plot: &crate::domain::PlotEntry,
    system: &str,
    config: &EngineConfig,
) -> Result<CandidateScore, EngineError> {
    if config.mode.is_reference() && system == plot.reference_system {
        return Err(EngineError::InvalidArgument(format!(
            "system {system:?} is the reference for plot {:?} and cannot be scored against itself",
            plot.plot_id
        )));
    }
    let candidate_text = plot
        .texts
        .get(system)
        .ok_or_else(|| EngineError::InvalidArgument(format!("plot {:?} has no text for system {system:?}", plot.plot_id)))?;
    let reference_text = plot.texts.get(&plot.reference_system).ok_or_else(|| {
        EngineError::InvalidArgument(format!("plot {:?} is missing its reference text", plot.plot_id))
    })?;

    let battery = load_battery();
    let mut per_test = Vec::with_capacity(battery.len());
    let mut missing_tests = Vec::new();
    for test in &battery {
        let outcome = if config.mode.is_reference() {
            evaluate_pair(judge, test, reference_text, candidate_text, config)
        } else {
            evaluate_single(judge, test, candidate_text, config)
        };
        match outcome {
            Ok(outcome) => per_test.push(outcome),
            Err(EngineError::TrialFailed { test_id, .. }) => missing_tests.push(test_id),
            Err(other) => return Err(other),
        }
    }
    if !missing_tests.is_empty() {
        return Err(EngineError::PartialScore { missing_tests });
    }
    Ok(CandidateScore {
        plot_id: plot.plot_id.clone(),
        candidate_system: system.to_string(),
        passes: per_test.iter().filter(|t| t.passed).count() as u32,
        per_test,
    })
}

struct TrialSpecItem<'a> {
    key: TrialKey,
    test: &'a TestSpec,
    reference_text: Option<&'a str>,
    candidate_text: &'a str,
}

fn collect_specs<'a>(
    dataset: &'a EvalDataset,
    battery: &'a [TestSpec],
    config: &EngineConfig,
) -> Vec<TrialSpecItem<'a>> {
    let orders: &[TrialOrder] = if config.mode.is_reference() {
        &[TrialOrder::ReferenceFirst, TrialOrder::CandidateFirst]
    } else {
        &[TrialOrder::CandidateFirst]
    };
    let mut specs = Vec::new();
    for plot in &dataset.plots {
        let reference_text = plot
            .texts
            .get(&plot.reference_system)
            .map(String::as_str)
            .filter(|_| config.mode.is_reference());
        for system in plot.candidate_systems() {
            let candidate_text = plot.texts[system].as_str();
            for test in battery {
                for order in orders {
                    specs.push(TrialSpecItem {
                        key: TrialKey {
                            dataset_id: dataset.dataset_id.clone(),
                            plot_id: plot.plot_id.clone(),
                            candidate_system: system.to_string(),
                            test_id: test.test_id,
                            order: *order,
                            mode: config.mode,
                            scale_granularity: config.scale_granularity,
                            judge_model: config.judge_model.clone(),
                        },
                        test,
                        reference_text,
                        candidate_text,
                    });
                }
            }
        }
    }
    specs
}

fn run_cached_trial(
    judge: &dyn JudgeClient,
    spec: &TrialSpecItem<'_>,
    scale: &LikertScale,
    config: &EngineConfig,
    store: &TrialStore,
) -> Result<TrialRecord, String> {
    if let Some(existing) = store.lookup(&spec.key) {
        return Ok(existing);
    }
    let output = execute_trial(
        judge,
        spec.test,
        spec.reference_text,
        spec.candidate_text,
        spec.key.order,
        scale,
        config,
    )?;
    let record = TrialRecord {
        key: spec.key.clone(),
        prompt_hash: output.prompt_hash,
        raw_response: output.raw_response,
        verdict: output.verdict,
        binary_label: output.binary_label,
        created_at: chrono::Utc::now(),
    };
    store.append(&record).map_err(|e| e.to_string())?;
    Ok(record)
}

/// Executes every trial spec, up to `config.parallelism` at a time. Cached
/// trials are reused; fresh ones are appended to the store as they finish.
fn execute_all(
    judge: &dyn JudgeClient,
    specs: &[TrialSpecItem<'_>],
    scale: &LikertScale,
    config: &EngineConfig,
    store: &TrialStore,
) -> (BTreeMap<TrialKey, TrialRecord>, Vec<TrialFailure>) {
    let next = AtomicUsize::new(0);
    let collected: Mutex<(BTreeMap<TrialKey, TrialRecord>, Vec<TrialFailure>)> =
        Mutex::new((BTreeMap::new(), Vec::new()));
    let workers = config.parallelism.min(specs.len()).max(1);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= specs.len() {
                    break;
                }
                let spec = &specs[i];
                let result = run_cached_trial(judge, spec, scale, config, store);
                let mut guard = collected.lock().expect("result lock poisoned");
                match result {
                    Ok(record) => {
                        guard.0.insert(spec.key.clone(), record);
                    }
                    Err(message) => guard.1.push(TrialFailure { key: spec.key.clone(), message }),
                }
            });
        }
    });

    let (records, mut failures) = collected.into_inner().expect("result lock poisoned");
    failures.sort_by(|a, b| a.key.cmp(&b.key));
    (records, failures)
}

/// Folds trial records into per-candidate scores at the given cutoff.
/// Deterministic: outcomes are looked up by key, never by arrival order.
fn aggregate_scores(
    dataset: &EvalDataset,
    battery: &[TestSpec],
    config: &EngineConfig,
    records: &BTreeMap<TrialKey, TrialRecord>,
    cutoff: i32,
) -> Vec<CandidateScore> {
    let mut scores = Vec::new();
    for plot in &dataset.plots {
        for system in plot.candidate_systems() {
            let key_for = |test_id: u8, order: TrialOrder| TrialKey {
                dataset_id: dataset.dataset_id.clone(),
                plot_id: plot.plot_id.clone(),
                candidate_system: system.to_string(),
                test_id,
                order,
                mode: config.mode,
                scale_granularity: config.scale_granularity,
                judge_model: config.judge_model.clone(),
            };
            let per_test: Vec<TestOutcome> = battery
                .iter()
                .map(|test| {
                    if config.mode.is_reference() {
                        let first = records[&key_for(test.test_id, TrialOrder::ReferenceFirst)]
                            .verdict
                            .clone()
                            .expect("reference-mode record carries a verdict");
                        let second = records[&key_for(test.test_id, TrialOrder::CandidateFirst)]
                            .verdict
                            .clone()
                            .expect("reference-mode record carries a verdict");
                        combine_pair(&first, &second, cutoff, test.test_id)
                    } else {
                        let label = records[&key_for(test.test_id, TrialOrder::CandidateFirst)]
                            .binary_label
                            .expect("single-mode record carries a label");
                        TestOutcome { test_id: test.test_id, combined_score: None, passed: label }
                    }
                })
                .collect();
            scores.push(CandidateScore {
                plot_id: plot.plot_id.clone(),
                candidate_system: system.to_string(),
                passes: per_test.iter().filter(|t| t.passed).count() as u32,
                per_test,
            });
        }
    }
    scores.sort_by(|a, b| (&a.plot_id, &a.candidate_system).cmp(&(&b.plot_id, &b.candidate_system)));
    scores
}

fn compute_run_id(dataset_id: &str, config: &EngineConfig, battery: &[TestSpec]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(dataset_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(
        format!(
            "{}|{}|{}|{}|{}|{}",
            config.mode, config.scale_granularity, config.cutoff, config.judge_model, config.temperature, config.max_tokens
        )
        .as_bytes(),
    );
    hasher.update([0u8]);
    hasher.update(serde_json::to_vec(battery).expect("battery serialization cannot fail"));
    let digest = hasher.finalize();
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

fn prepare<'a>(
    dataset: &'a EvalDataset,
    battery: &'a [TestSpec],
    config: &EngineConfig,
) -> Result<(Vec<TrialSpecItem<'a>>, LikertScale), EngineError> {
    config.check().map_err(EngineError::InvalidConfig)?;
    validate_battery(battery, false)?;
    let violations = validate_dataset(dataset);
    if !violations.is_empty() {
        return Err(EngineError::Precondition(violations));
    }
    let scale = make_scale(config.scale_granularity)?;
    Ok((collect_specs(dataset, battery, config), scale))
}

/// Evaluates every (plot, non-reference system) pair of the dataset on the
/// canonical battery. Trials already in the store are reused, so rerunning
/// after an interruption only issues the missing judge calls.
pub fn run_dataset(
    judge: &dyn JudgeClient,
    dataset: &EvalDataset,
    config: &EngineConfig,
    store: &TrialStore,
) -> Result<EvalRunResult, EngineError> {
    run_dataset_with_battery(judge, dataset, &load_battery(), config, store)
}

/// As [`run_dataset`], with an explicit battery.
pub fn run_dataset_with_battery(
    judge: &dyn JudgeClient,
    dataset: &EvalDataset,
    battery: &[TestSpec],
    config: &EngineConfig,
    store: &TrialStore,
) -> Result<EvalRunResult, EngineError> {
    let (specs, scale) = prepare(dataset, battery, config)?;
    let total_trials = specs.len();
    let (records, failures) = execute_all(judge, &specs, &scale, config, store);
    if !failures.is_empty() {
        let manifest = failures.iter().map(|f| f.key.clone()).collect();
        return Err(EngineError::Partial { manifest, failures, total_trials });
    }
    Ok(EvalRunResult {
        run_id: compute_run_id(&dataset.dataset_id, config, battery),
        config: config.clone(),
        scores: aggregate_scores(dataset, battery, config, &records, config.cutoff),
        trial_refs: records.into_keys().collect(),
    })
}

/// Re-binarizes one set of trials at several cutoffs. The judge call count is
/// whatever the single underlying run needs; sweeping more cutoffs is free.
pub fn sweep_cutoff(
    judge: &dyn JudgeClient,
    dataset: &EvalDataset,
    config: &EngineConfig,
    cutoffs: &[i32],
    store: &TrialStore,
) -> Result<BTreeMap<i32, EvalRunResult>, EngineError> {
    sweep_cutoff_with_battery(judge, dataset, &load_battery(), config, cutoffs, store)
}

/// As [`sweep_cutoff`], with an explicit battery.
pub fn sweep_cutoff_with_battery(
    judge: &dyn JudgeClient,
    dataset: &EvalDataset,
    battery: &[TestSpec],
    config: &EngineConfig,
    cutoffs: &[i32],
    store: &TrialStore,
) -> Result<BTreeMap<i32, EvalRunResult>, EngineError> {
    if !config.mode.is_reference() {
        return Err(EngineError::InvalidArgument(
            "cutoff sweeps require a reference mode; single modes have no combined score".into(),
        ));
    }
    if cutoffs.is_empty() {
        return Err(EngineError::InvalidArgument("at least one cutoff required".into()));
    }
    for cutoff in cutoffs {
        let mut probe = config.clone();
        probe.cutoff = *cutoff;
        probe.check().map_err(EngineError::InvalidConfig)?;
    }

    let (specs, scale) = prepare(dataset, battery, config)?;
    let total_trials = specs.len();
    let (records, failures) = execute_all(judge, &specs, &scale, config, store);
    if !failures.is_empty() {
        let manifest = failures.iter().map(|f| f.key.clone()).collect();
        return Err(EngineError::Partial { manifest, failures, total_trials });
    }

    let trial_refs: Vec<TrialKey> = records.keys().cloned().collect();
    let mut results = BTreeMap::new();
    for cutoff in cutoffs {
        let mut cut_config = config.clone();
        cut_config.cutoff = *cutoff;
        results.insert(
            *cutoff,
            EvalRunResult {
                run_id: compute_run_id(&dataset.dataset_id, &cut_config, battery),
                scores: aggregate_scores(dataset, battery, &cut_config, &records, *cutoff),
                config: cut_config,
                trial_refs: trial_refs.clone(),
            },
        );
    }
    Ok(results)
}

/// Asks the judge endpoint to distill a story into a plot prompt.
pub fn extract_plot(
    judge: &dyn JudgeClient,
    reference_text: &str,
    extractor_model: &str,
    max_tokens: u32,
) -> Result<String, EngineError> {
    if reference_text.trim().is_empty() {
        return Err(EngineError::InvalidArgument("reference text must be non-empty".into()));
    }
    let request = JudgeRequest {
        model: extractor_model.to_string(),
        messages: vec![
            Message { role: Role::System, content: "You are an experienced story editor.".into() },
            Message {
                role: Role::User,
                content: format!(
                    "Read the following story and extract its plot: summarize the storyline in one concise paragraph that could serve as a writing prompt.\n\n[The Start of Story]\n{reference_text}\n[The End of Story]\n\nReply with the plot summary only."
                ),
            },
        ],
        temperature: 0.0,
        max_tokens,
    };
    Ok(judge.complete(&request)?.text)
}

/// Generates one candidate story per plot with the given model. Returns a map
/// keyed by (plot_id, model).
pub fn generate_candidates(
    judge: &dyn JudgeClient,
    plots: &[(String, String)],
    generator_model: &str,
    temperature: f64,
    max_tokens: u32,
) -> Result<BTreeMap<(String, String), String>, EngineError> {
    let mut out = BTreeMap::new();
    for (plot_id, plot_text) in plots {
        if plot_text.trim().is_empty() {
            return Err(EngineError::InvalidArgument(format!("plot {plot_id:?} has empty plot text")));
        }
        let request = JudgeRequest {
            model: generator_model.to_string(),
            messages: vec![
                Message { role: Role::System, content: "You are a skilled creative writer.".into() },
                Message {
                    role: Role::User,
                    content: format!(
                        "Write a complete short story based on the following plot. Aim for a polished, publishable piece.\n\nPlot: {plot_text}\n\nReply with the story text only."
                    ),
                },
            ],
            temperature,
            max_tokens,
        };
        let story = judge.complete(&request)?.text;
        out.insert((plot_id.clone(), generator_model.to_string()), story);
    }
    Ok(out)
}
