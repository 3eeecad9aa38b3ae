//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Every oracle here is written from first principles in this file and stays
//! independent of the implementation path it checks.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use tempfile::tempdir;
use ttcw_core::battery::{load_battery, make_scale, map_verdict, render_prompt};
use ttcw_core::domain::{
    CandidatePosition, CandidateScore, EngineConfig, EvalDataset, EvalMode, HumanScale, PlotEntry,
    TestOutcome,
};
use ttcw_core::engine::{evaluate_pair, run_dataset, sweep_cutoff, EngineError, EvalRunResult};
use ttcw_core::fixtures::monotone_dataset;
use ttcw_core::judge::{
    FailAfter, HttpJudge, JudgeClient, JudgeError, JudgeRequest, Message, MockJudge, RetryPolicy,
    Role, ScriptedJudge,
};
use ttcw_core::metrics::{build_report, kendall, spearman};
use ttcw_core::store::{export_report, ExportFormat, TrialStore};

const TOL: f64 = 1e-9;

fn reference_config(cutoff: i32, parallelism: usize) -> EngineConfig {
    EngineConfig {
        cutoff,
        parallelism,
        mode: EvalMode::ReferenceAnalyzeRate,
        ..EngineConfig::default()
    }
}

fn assert_runtime(started: Instant, budget: Duration, name: &str) {
    let elapsed = started.elapsed();
    assert!(elapsed < budget, "{name} took {elapsed:?}, budget {budget:?}");
}

/// Criterion 1: map_verdict matches a hand-enumerated table for every scale,
/// token, and position; the mirror property holds exhaustively.
#[test]
fn acceptance_verdict_machinery_oracle() {
    let started = Instant::now();

    // hand-enumerated: (granularity, token, A-relative value)
    let table: &[(u8, &str, i32)] = &[
        (3, "[[A>B]]", 1),
        (3, "[[A=B]]", 0),
        (3, "[[B>A]]", -1),
        (5, "[[A>>B]]", 2),
        (5, "[[A>B]]", 1),
        (5, "[[A=B]]", 0),
        (5, "[[B>A]]", -1),
        (5, "[[B>>A]]", -2),
        (7, "[[A>>>B]]", 3),
        (7, "[[A>>B]]", 2),
        (7, "[[A>B]]", 1),
        (7, "[[A=B]]", 0),
        (7, "[[B>A]]", -1),
        (7, "[[B>>A]]", -2),
        (7, "[[B>>>A]]", -3),
    ];

    for granularity in [3u8, 5, 7] {
        let scale = make_scale(granularity).unwrap();
        let expected: Vec<&(u8, &str, i32)> = table.iter().filter(|row| row.0 == granularity).collect();
        assert_eq!(scale.levels.len(), expected.len(), "{granularity}-point scale size");
        for (_, token, value) in expected.iter() {
            let at_a = map_verdict(token, CandidatePosition::A, &scale).unwrap();
            let at_b = map_verdict(token, CandidatePosition::B, &scale).unwrap();
            assert_eq!(at_a.a_relative_value, *value, "{granularity}pt {token} raw value");
            assert_eq!(at_a.candidate_favoring, *value, "{granularity}pt {token} at A");
            assert_eq!(at_b.candidate_favoring, -*value, "{granularity}pt {token} at B");
            assert_eq!(at_a.candidate_favoring, -at_b.candidate_favoring, "mirror {token}");
        }
    }

    assert_runtime(started, Duration::from_secs(1), "verdict machinery oracle");
    println!("ACCEPTANCE PASS: verdict machinery oracle (3/5/7-point, all tokens x positions)");
}

/// Criterion 2: over all 25 five-point verdict pairs x cutoffs -4..=4, the
/// engine's pass/fail equals brute-force enumeration (225 cases).
#[test]
fn acceptance_binarization_oracle() {
    let started = Instant::now();

    // independent token table: A-relative values, written out by hand
    let token_value: &[(&str, i32)] = &[
        ("[[A>>B]]", 2),
        ("[[A>B]]", 1),
        ("[[A=B]]", 0),
        ("[[B>A]]", -1),
        ("[[B>>A]]", -2),
    ];
    let token_for = |value: i32| -> &str {
        token_value.iter().find(|(_, v)| *v == value).map(|(t, _)| *t).unwrap()
    };

    let battery = load_battery();
    let mut cases = 0;
    for favoring_1 in -2..=2 {
        for favoring_2 in -2..=2 {
            for cutoff in -4..=4 {
                // trial 1 shows the candidate at B: token value is -favoring.
                // trial 2 shows the candidate at A: token value is +favoring.
                let judge = ScriptedJudge::new([
                    format!("Therefore: {}", token_for(-favoring_1)),
                    format!("Therefore: {}", token_for(favoring_2)),
                ]);
                let outcome = evaluate_pair(
                    &judge,
                    &battery[0],
                    "reference story text",
                    "candidate story text",
                    &reference_config(cutoff, 1),
                )
                .unwrap();

                // brute-force oracle: sum the two favoring values, compare
                let expected_pass = favoring_1 + favoring_2 >= cutoff;
                assert_eq!(outcome.combined_score, Some(favoring_1 + favoring_2));
                assert_eq!(
                    outcome.passed, expected_pass,
                    "favoring ({favoring_1},{favoring_2}) cutoff {cutoff}"
                );
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 225);

    assert_runtime(started, Duration::from_secs(1), "binarization oracle");
    println!("ACCEPTANCE PASS: binarization oracle (225/225 verdict-pair x cutoff cases)");
}

// ---- first-principles metric oracles -------------------------------------

fn oracle_rank(values: &[f64], i: usize) -> f64 {
    let less = values.iter().filter(|v| **v < values[i]).count() as f64;
    let equal = values.iter().filter(|v| **v == values[i]).count() as f64;
    less + (equal + 1.0) / 2.0
}

fn oracle_spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let rx: Vec<f64> = (0..xs.len()).map(|i| oracle_rank(xs, i)).collect();
    let ry: Vec<f64> = (0..ys.len()).map(|i| oracle_rank(ys, i)).collect();
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}

fn oracle_kendall(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    let (mut concordant, mut discordant, mut tied_x, mut tied_y) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = xs[i] - xs[j];
            let dy = ys[i] - ys[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tied_x += 1.0;
            } else if dy == 0.0 {
                tied_y += 1.0;
            } else if (dx > 0.0) == (dy > 0.0) {
                concordant += 1.0;
            } else {
                discordant += 1.0;
            }
        }
    }
    let d1 = concordant + discordant + tied_x;
    let d2 = concordant + discordant + tied_y;
    if d1 == 0.0 || d2 == 0.0 {
        None
    } else {
        Some((concordant - discordant) / (d1 * d2).sqrt())
    }
}

/// Criterion 3: spearman and kendall match the first-principles oracles on
/// every vector pair of length <= 4 over {0,1,2} and hit the exact anchors.
#[test]
fn acceptance_metrics_oracle() {
    let started = Instant::now();

    // anchors at 1e-9
    let anchors: &[(&[f64], &[f64], f64)] = &[
        (&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0], 1.0),
        (&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], -1.0),
        (&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0], 0.5),
    ];
    for (xs, ys, expected) in anchors {
        let rho = spearman(xs, ys).unwrap().unwrap();
        let tau = kendall(xs, ys).unwrap().unwrap();
        assert!((rho - expected).abs() < TOL, "spearman {xs:?} {ys:?}: {rho} vs {expected}");
        assert!((tau - expected).abs() < TOL, "kendall {xs:?} {ys:?}: {tau} vs {expected}");
    }

    // exhaustive sweep; length 4 alone is the 6,561-pair grid
    let mut checked_len4 = 0u32;
    for n in 2..=4usize {
        let count = 3usize.pow(n as u32);
        let decode = |mut code: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v = (code % 3) as f64;
                    code /= 3;
                    v
                })
                .collect()
        };
        for xi in 0..count {
            let xs = decode(xi);
            for yi in 0..count {
                let ys = decode(yi);
                let match_opt = |got: Option<f64>, want: Option<f64>, what: &str| match (got, want) {
                    (Some(a), Some(b)) => {
                        assert!((a - b).abs() < TOL, "{what} {xs:?} {ys:?}: {a} vs {b}")
                    }
                    (None, None) => {}
                    other => panic!("{what} {xs:?} {ys:?}: definedness mismatch {other:?}"),
                };
                match_opt(spearman(&xs, &ys).unwrap(), oracle_spearman(&xs, &ys), "spearman");
                match_opt(kendall(&xs, &ys).unwrap(), oracle_kendall(&xs, &ys), "kendall");
                if n == 4 {
                    checked_len4 += 1;
                }
            }
        }
    }
    assert_eq!(checked_len4, 6561);

    assert_runtime(started, Duration::from_secs(10), "metrics oracle");
    println!("ACCEPTANCE PASS: metrics oracle (anchors at 1e-9; 6561 length-4 pairs plus shorter)");
}

/// Criterion 4: on a synthetic 12-plot x 3-candidate dataset with
/// human-distinct scores, 27 of 36 correct pairs yields exactly 0.75.
#[test]
fn acceptance_pairwise_accuracy_consistency() {
    let started = Instant::now();

    let systems = ["model-a", "model-b", "model-c"];
    let human = [12.0, 8.0, 3.0];
    let mut plots = Vec::new();
    let mut scores: Vec<CandidateScore> = Vec::new();
    for i in 0..12usize {
        let plot_id = format!("plot-{i:02}");
        let mut texts = BTreeMap::new();
        texts.insert("reference".to_string(), "the reference story".to_string());
        let mut human_scores = BTreeMap::new();
        // 9 plots ranked correctly (3/3 pairs), 3 plots fully reversed (0/3):
        // 9 * 3 = 27 correct of 36 total
        let predicted: [u32; 3] = if i < 9 { [14, 9, 4] } else { [4, 9, 14] };
        for (idx, system) in systems.iter().enumerate() {
            texts.insert((*system).to_string(), "a story".to_string());
            human_scores.insert((*system).to_string(), human[idx]);
            scores.push(CandidateScore {
                plot_id: plot_id.clone(),
                candidate_system: (*system).to_string(),
                passes: predicted[idx],
                per_test: (1..=14u8)
                    .map(|t| TestOutcome {
                        test_id: t,
                        combined_score: Some(4),
                        passed: u32::from(t) <= predicted[idx],
                    })
                    .collect(),
            });
        }
        plots.push(PlotEntry {
            plot_id,
            plot_text: None,
            reference_system: "reference".to_string(),
            texts,
            human_scores,
        });
    }
    let dataset = EvalDataset {
        dataset_id: "synthetic-12x3".to_string(),
        scale: HumanScale::ttcw(),
        plots,
    };
    assert_eq!(dataset.validate(), Vec::new());

    let run = EvalRunResult {
        run_id: "synthetic".to_string(),
        config: reference_config(-2, 1),
        scores,
        trial_refs: Vec::new(),
    };
    let report = build_report(&run, &dataset).unwrap();

    let correct: u32 = report.per_plot.values().map(|m| m.pair_correct).sum();
    let total: u32 = report.per_plot.values().map(|m| m.pair_total).sum();
    assert_eq!((correct, total), (27, 36));
    assert_eq!(report.pairwise_accuracy, Some(0.75), "27/36 must be exactly 0.75");

    assert_runtime(started, Duration::from_secs(1), "pairwise accuracy consistency");
    println!("ACCEPTANCE PASS: pairwise accuracy consistency (27/36 = 0.75 exactly)");
}

/// Criterion 5: the monotone-quality fixture recovers the planted ranking
/// with avg_spearman = 1.0 and pairwise_accuracy = 1.0 at cutoff -2, and the
/// exported reports are byte-identical across parallelism 1 and 8.
#[test]
fn acceptance_end_to_end_mock_pipeline() {
    let started = Instant::now();
    let dataset = monotone_dataset("e2e", 4);

    let mut exports: Vec<BTreeMap<String, Vec<u8>>> = Vec::new();
    for parallelism in [1usize, 8] {
        let judge = MockJudge::new();
        let store = TrialStore::in_memory();
        let config = reference_config(-2, parallelism);
        let run = run_dataset(&judge, &dataset, &config, &store).unwrap();
        let report = build_report(&run, &dataset).unwrap();

        assert_eq!(report.avg_spearman, Some(1.0), "parallelism {parallelism}");
        assert_eq!(report.avg_kendall, Some(1.0), "parallelism {parallelism}");
        assert_eq!(report.pairwise_accuracy, Some(1.0), "parallelism {parallelism}");

        let dir = tempdir().unwrap();
        let mut files = export_report(&report, &run, &dataset, "reference-analyze-rate", ExportFormat::Json, dir.path())
            .unwrap();
        files.extend(
            export_report(&report, &run, &dataset, "reference-analyze-rate", ExportFormat::Csv, dir.path())
                .unwrap(),
        );
        let mut bytes = BTreeMap::new();
        for file in files {
            bytes.insert(
                file.file_name().unwrap().to_string_lossy().to_string(),
                std::fs::read(&file).unwrap(),
            );
        }
        exports.push(bytes);
    }
    assert_eq!(exports[0].len(), 5);
    for (name, content) in &exports[0] {
        assert_eq!(
            Some(content),
            exports[1].get(name),
            "{name} differs between parallelism 1 and 8"
        );
    }

    assert_runtime(started, Duration::from_secs(5), "end-to-end mock pipeline");
    println!("ACCEPTANCE PASS: end-to-end mock pipeline (ranking recovered; byte-identical across parallelism 1 and 8)");
}

/// Criterion 6: per-candidate passes are monotone non-increasing across
/// cutoffs -4..=4, and sweeping a populated store issues zero judge calls.
#[test]
fn acceptance_cutoff_sweep_properties() {
    let started = Instant::now();
    let dataset = monotone_dataset("sweep-acc", 4);
    let store = TrialStore::in_memory();
    let config = reference_config(-2, 4);

    let populate_judge = MockJudge::new();
    run_dataset(&populate_judge, &dataset, &config, &store).unwrap();

    let sweep_judge = MockJudge::new();
    let cutoffs: Vec<i32> = (-4..=4).collect();
    let results = sweep_cutoff(&sweep_judge, &dataset, &config, &cutoffs, &store).unwrap();
    assert_eq!(sweep_judge.calls(), 0, "sweep over a populated store must be free");
    assert_eq!(results.len(), 9);

    for window in cutoffs.windows(2) {
        let lower = &results[&window[0]].scores;
        let higher = &results[&window[1]].scores;
        assert_eq!(lower.len(), higher.len());
        for (a, b) in lower.iter().zip(higher) {
            assert_eq!(a.candidate_system, b.candidate_system);
            assert!(
                a.passes >= b.passes,
                "{}/{}: passes rose from {} to {} between cutoffs {} and {}",
                a.plot_id,
                a.candidate_system,
                a.passes,
                b.passes,
                window[0],
                window[1]
            );
        }
    }

    assert_runtime(started, Duration::from_secs(5), "cutoff sweep properties");
    println!("ACCEPTANCE PASS: cutoff sweep properties (monotone passes; zero judge calls on populated store)");
}

/// Criterion 7: interrupt a run after K of N trials, rerun against the same
/// store, and the final report equals an uninterrupted run with exactly
/// N - K new judge calls.
#[test]
fn acceptance_resume_after_interruption() {
    let started = Instant::now();
    let dataset = monotone_dataset("resume", 4);
    let config = reference_config(-2, 4);
    let total_trials = 4 * 3 * 14 * 2; // plots x candidates x tests x orders
    let survive = 100u64;

    let dir = tempdir().unwrap();
    let log_path = dir.path().join("trials.jsonl");

    // first run dies after K successful judge calls
    let store = TrialStore::open(&log_path).unwrap();
    let failing = FailAfter::new(MockJudge::new(), survive);
    match run_dataset(&failing, &dataset, &config, &store) {
        Err(EngineError::Partial { manifest, total_trials: reported, .. }) => {
            assert_eq!(reported, total_trials);
            assert_eq!(manifest.len(), total_trials - survive as usize);
        }
        other => panic!("expected a partial-run error, got {other:?}"),
    }
    assert_eq!(store.len(), survive as usize);
    drop(store);

    // resumed run completes with exactly N - K new calls
    let store = TrialStore::open(&log_path).unwrap();
    let resume_judge = MockJudge::new();
    let resumed = run_dataset(&resume_judge, &dataset, &config, &store).unwrap();
    assert_eq!(resume_judge.calls(), total_trials - survive as usize);
    assert_eq!(store.len(), total_trials);

    // reference: one uninterrupted run on a fresh store
    let fresh_judge = MockJudge::new();
    let fresh_store = TrialStore::in_memory();
    let uninterrupted = run_dataset(&fresh_judge, &dataset, &config, &fresh_store).unwrap();

    assert_eq!(resumed, uninterrupted, "resumed run must equal an uninterrupted run");
    let report_resumed = build_report(&resumed, &dataset).unwrap();
    let report_fresh = build_report(&uninterrupted, &dataset).unwrap();
    assert_eq!(report_resumed, report_fresh);

    assert_runtime(started, Duration::from_secs(10), "resume after interruption");
    println!(
        "ACCEPTANCE PASS: resume (interrupted at {survive}/{total_trials}; rerun issued {} calls)",
        total_trials - survive as usize
    );
}

/// Criterion 8: reference-mode candidate scores rest on exactly 28 trials
/// (14 tests x 2 orders); single modes on exactly 14, verified from the
/// trial log.
#[test]
fn acceptance_trial_count_law() {
    let started = Instant::now();
    let dataset = monotone_dataset("trial-law", 2);
    let dir = tempdir().unwrap();

    for (mode, expected_per_candidate) in
        [(EvalMode::ReferenceAnalyzeRate, 28usize), (EvalMode::SingleAnalyzeRate, 14usize)]
    {
        let log_path = dir.path().join(format!("{mode}.jsonl"));
        let judge = MockJudge::new();
        let store = TrialStore::open(&log_path).unwrap();
        let config = EngineConfig { mode, cutoff: -2, parallelism: 4, ..EngineConfig::default() };
        let run = run_dataset(&judge, &dataset, &config, &store).unwrap();
        drop(store);

        // recount from the persisted log, not from the in-memory run
        let reloaded = TrialStore::open(&log_path).unwrap();
        let mut per_candidate: BTreeMap<(String, String), usize> = BTreeMap::new();
        for record in reloaded.records() {
            *per_candidate
                .entry((record.key.plot_id.clone(), record.key.candidate_system.clone()))
                .or_insert(0) += 1;
        }
        assert_eq!(per_candidate.len(), 2 * 3, "{mode}: candidate-score count");
        for (candidate, count) in &per_candidate {
            assert_eq!(
                *count, expected_per_candidate,
                "{mode}: candidate {candidate:?} trial count"
            );
        }
        assert_eq!(run.trial_refs.len(), 2 * 3 * expected_per_candidate);
    }

    assert_runtime(started, Duration::from_secs(5), "trial count law");
    println!("ACCEPTANCE PASS: trial-count law (28 per candidate in reference modes, 14 in single modes)");
}

// ---- stub HTTP server for wire-protocol conformance -----------------------

struct CapturedRequest {
    request_line: String,
    headers: Vec<(String, String)>,
    body: String,
}

struct StubResponse {
    status: u16,
    reason: &'static str,
    headers: Vec<(&'static str, String)>,
    body: String,
}

impl StubResponse {
    fn ok(content: &str) -> Self {
        StubResponse {
            status: 200,
            reason: "OK",
            headers: vec![("Content-Type", "application/json".to_string())],
            body: serde_json::json!({
                "model": "stub-model",
                "choices": [{"message": {"role": "assistant", "content": content}}]
            })
            .to_string(),
        }
    }

    fn status(status: u16, reason: &'static str, body: &str) -> Self {
        StubResponse { status, reason, headers: Vec::new(), body: body.to_string() }
    }
}

struct StubServer {
    addr: SocketAddr,
    captured: Arc<Mutex<Vec<CapturedRequest>>>,
    handle: std::thread::JoinHandle<()>,
}

impl StubServer {
    fn start(responses: Vec<StubResponse>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let captured = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&captured);
        let handle = std::thread::spawn(move || {
            for response in responses {
                let (mut stream, _) = match listener.accept() {
                    Ok(conn) => conn,
                    Err(_) => return,
                };
                if let Some(request) = read_request(&mut stream) {
                    sink.lock().unwrap().push(request);
                }
                let mut head = format!("HTTP/1.1 {} {}\r\n", response.status, response.reason);
                for (name, value) in &response.headers {
                    head.push_str(&format!("{name}: {value}\r\n"));
                }
                head.push_str(&format!(
                    "Content-Length: {}\r\nConnection: close\r\n\r\n",
                    response.body.len()
                ));
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(response.body.as_bytes());
            }
        });
        StubServer { addr, captured, handle }
    }

    fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    fn finish(self) -> Vec<CapturedRequest> {
        self.handle.join().unwrap();
        Arc::try_unwrap(self.captured).ok().unwrap().into_inner().unwrap()
    }
}

fn read_request(stream: &mut std::net::TcpStream) -> Option<CapturedRequest> {
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    // read the head byte-by-byte until the blank line
    while !buf.ends_with(b"\r\n\r\n") {
        match stream.read(&mut byte) {
            Ok(1) => buf.push(byte[0]),
            _ => return None,
        }
    }
    let head = String::from_utf8_lossy(&buf).to_string();
    let mut lines = head.lines();
    let request_line = lines.next()?.to_string();
    let headers: Vec<(String, String)> = lines
        .filter_map(|line| {
            line.split_once(':').map(|(k, v)| (k.trim().to_ascii_lowercase(), v.trim().to_string()))
        })
        .collect();
    let content_length: usize = headers
        .iter()
        .find(|(k, _)| k == "content-length")
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; content_length];
    stream.read_exact(&mut body).ok()?;
    Some(CapturedRequest { request_line, headers, body: String::from_utf8_lossy(&body).to_string() })
}

/// Criterion 9: against a local stub server the client sends the exact JSON
/// body shape, honors 429 retries, and surfaces 401 as permanent.
#[test]
fn acceptance_wire_protocol_conformance() {
    let started = Instant::now();

    // exact body shape, prompt passed through byte-for-byte
    let battery = load_battery();
    let scale = make_scale(5).unwrap();
    let bundle = render_prompt(
        &battery[0],
        "Reference story, with a comma and \"quotes\".",
        "Candidate story.\nSecond line.",
        &scale,
        EvalMode::ReferenceAnalyzeRate,
    )
    .unwrap();
    let config = EngineConfig { judge_model: "stub-model".to_string(), ..EngineConfig::default() };
    let request = JudgeRequest::from_bundle(&bundle, &config);

    let server = StubServer::start(vec![StubResponse::ok("Therefore: [[A>B]]")]);
    let judge = HttpJudge::with_key(server.base_url(), Some("secret-key".to_string()))
        .with_retry(RetryPolicy::immediate());
    let response = judge.complete(&request).unwrap();
    assert_eq!(response.text, "Therefore: [[A>B]]");
    assert_eq!(response.attempt_count, 1);

    let captured = server.finish();
    assert_eq!(captured.len(), 1);
    let seen = &captured[0];
    assert_eq!(seen.request_line, "POST /chat/completions HTTP/1.1");
    assert!(seen
        .headers
        .iter()
        .any(|(k, v)| k == "authorization" && v == "Bearer secret-key"));
    assert!(seen
        .headers
        .iter()
        .any(|(k, v)| k == "content-type" && v.starts_with("application/json")));

    let body: serde_json::Value = serde_json::from_str(&seen.body).unwrap();
    let keys: Vec<&str> = body.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["max_tokens", "messages", "model", "temperature"]);
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 1024);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][0]["content"], bundle.system_text);
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(body["messages"][1]["content"], bundle.user_text);
    // the client must not mutate the rendered prompt
    let echoed = ttcw_core::battery::render_prompt(
        &battery[0],
        "Reference story, with a comma and \"quotes\".",
        "Candidate story.\nSecond line.",
        &scale,
        EvalMode::ReferenceAnalyzeRate,
    )
    .unwrap();
    assert_eq!(echoed.prompt_hash, bundle.prompt_hash);

    // 429 twice (honoring Retry-After), then success: attempt_count = 3
    let server = StubServer::start(vec![
        StubResponse {
            status: 429,
            reason: "Too Many Requests",
            headers: vec![("Retry-After", "0".to_string())],
            body: "slow down".to_string(),
        },
        StubResponse {
            status: 429,
            reason: "Too Many Requests",
            headers: vec![("Retry-After", "0".to_string())],
            body: "slow down".to_string(),
        },
        StubResponse::ok("Therefore: [[A=B]]"),
    ]);
    let judge = HttpJudge::with_key(server.base_url(), None).with_retry(RetryPolicy::immediate());
    let response = judge.complete(&request).unwrap();
    assert_eq!(response.attempt_count, 3);
    assert_eq!(response.text, "Therefore: [[A=B]]");
    assert_eq!(server.finish().len(), 3);

    // 401 is permanent: exactly one request, no retry
    let server = StubServer::start(vec![StubResponse::status(401, "Unauthorized", "bad key")]);
    let judge = HttpJudge::with_key(server.base_url(), Some("wrong".to_string()))
        .with_retry(RetryPolicy::immediate());
    match judge.complete(&request) {
        Err(JudgeError::Permanent { status: 401, .. }) => {}
        other => panic!("expected permanent 401, got {other:?}"),
    }
    assert_eq!(server.finish().len(), 1);

    // 500 then success is retried
    let server = StubServer::start(vec![
        StubResponse::status(500, "Internal Server Error", "oops"),
        StubResponse::ok("Therefore: [[B>A]]"),
    ]);
    let judge = HttpJudge::with_key(server.base_url(), None).with_retry(RetryPolicy::immediate());
    assert_eq!(judge.complete(&request).unwrap().attempt_count, 2);
    server.finish();

    // malformed 200 body is a protocol error
    let server = StubServer::start(vec![StubResponse::status(200, "OK", "{\"weird\": true}")]);
    let judge = HttpJudge::with_key(server.base_url(), None).with_retry(RetryPolicy::immediate());
    assert!(matches!(judge.complete(&request), Err(JudgeError::Protocol { .. })));
    server.finish();

    // a request with no user message is rejected before hitting the wire
    let bad = JudgeRequest {
        model: "stub-model".to_string(),
        messages: vec![Message { role: Role::System, content: "only system".to_string() }],
        temperature: 0.0,
        max_tokens: 8,
    };
    let judge = HttpJudge::with_key("http://127.0.0.1:9", None).with_retry(RetryPolicy::immediate());
    assert!(matches!(judge.complete(&bad), Err(JudgeError::Protocol { .. })));

    assert_runtime(started, Duration::from_secs(5), "wire-protocol conformance");
    println!("ACCEPTANCE PASS: wire-protocol conformance (body shape, 429 retry, permanent 401)");
}
