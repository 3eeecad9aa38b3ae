//! `ttcw`: command-line driver for the creativity evaluation harness.
//!
//! Subcommands: `run` (one evaluation), `sweep` (re-binarize one set of
//! trials at several cutoffs), `ablate` (all four evaluation strategies),
//! `generate` (plot extraction / candidate generation into a new dataset).
//!
//! Exit codes: 0 success, 1 partial run (resume manifest written), 2 usage
//! error, 3 data error, 4 judge transport failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ttcw_core::battery::{load_battery, load_battery_file};
use ttcw_core::domain::{EngineConfig, EvalMode, TestSpec};
use ttcw_core::engine::{
    extract_plot, generate_candidates, run_dataset_with_battery, sweep_cutoff_with_battery,
    EngineError, EvalRunResult,
};
use ttcw_core::judge::{HttpJudge, JudgeClient, JudgeError, MockJudge, StaticJudge};
use ttcw_core::metrics::{build_report, RankingReport};
use ttcw_core::store::{export_report, load_dataset, save_dataset, ExportFormat, StoreError, TrialStore};

#[derive(Parser)]
#[command(
    name = "ttcw",
    version,
    about = "Reference-based creativity evaluation for generated stories on the 14-test TTCW battery",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a dataset and report ranking agreement with human scores
    Run(RunArgs),
    /// Re-binarize one set of trials at several cutoffs (no new judge calls once cached)
    Sweep(SweepArgs),
    /// Run all four evaluation strategies and compare them
    Ablate(AblateArgs),
    /// Extract plots and/or generate candidate stories into a new dataset file
    Generate(GenerateArgs),
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset JSON file
    #[arg(long)]
    dataset: PathBuf,
    /// Trial log (JSONL, append-only); defaults to <out-dir>/trials.jsonl
    #[arg(long)]
    trials: Option<PathBuf>,
    /// Output directory for reports
    #[arg(long, default_value = "ttcw-out")]
    out_dir: PathBuf,
    /// Base URL of a chat-completions judge endpoint (credentials via JUDGE_API_KEY)
    #[arg(long)]
    judge_url: Option<String>,
    /// Judge model identifier
    #[arg(long)]
    judge_model: Option<String>,
    /// Judge sampling temperature
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Maximum judge response length in tokens
    #[arg(long, default_value_t = 1024)]
    max_tokens: u32,
    /// Maximum concurrent judge calls
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    /// Pass cutoff on the two-trial combined score; defaults to minus the
    /// scale's strongest level (-2 on the 5-point scale)
    #[arg(long, allow_hyphen_values = true)]
    cutoff: Option<i32>,
    /// Likert scale granularity
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u8))]
    scale: u8,
    /// Use the deterministic offline mock judge (fixture datasets only)
    #[arg(long)]
    mock: bool,
    /// Battery override file (JSON list of tests); relaxes the 14-test shape
    #[arg(long)]
    custom_battery: Option<PathBuf>,
    /// Reserved; the mock judge is already deterministic
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Evaluation strategy
    #[arg(long, default_value = "reference-analyze-rate", value_parser = parse_mode)]
    mode: EvalMode,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Comma-separated cutoffs, e.g. -3,-2,-1,0
    #[arg(long, allow_hyphen_values = true)]
    cutoffs: String,
    /// Evaluation strategy (must be a reference mode)
    #[arg(long, default_value = "reference-analyze-rate", value_parser = parse_mode)]
    mode: EvalMode,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Args)]
struct GenerateArgs {
    /// Input dataset JSON file (never overwritten)
    #[arg(long)]
    dataset: PathBuf,
    /// Output dataset path; must not already exist
    #[arg(long)]
    output: PathBuf,
    /// Comma-separated model ids to generate candidate stories with
    #[arg(long)]
    models: Option<String>,
    /// Extract a plot from each reference story that lacks one
    #[arg(long)]
    extract_plots: bool,
    /// Base URL of a chat-completions endpoint
    #[arg(long)]
    judge_url: Option<String>,
    /// Model used for plot extraction
    #[arg(long, default_value = "extractor")]
    extractor_model: String,
    /// Sampling temperature for generation
    #[arg(long, default_value_t = 0.7)]
    temperature: f64,
    /// Maximum generated length in tokens
    #[arg(long, default_value_t = 4096)]
    max_tokens: u32,
    /// Use a deterministic offline backend
    #[arg(long)]
    mock: bool,
}

fn parse_mode(s: &str) -> Result<EvalMode, String> {
    s.parse()
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<JudgeError> for CliError {
    fn from(e: JudgeError) -> Self {
        CliError { code: 4, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Generate(args) => cmd_generate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn battery_for(args: &EvalArgs) -> Result<Vec<TestSpec>, CliError> {
    match &args.custom_battery {
        // a custom battery may reshape the test set, so counts are relaxed
        Some(path) => load_battery_file(path, false).map_err(|e| CliError::data(e.to_string())),
        None => Ok(load_battery()),
    }
}

fn judge_for(args: &EvalArgs) -> Result<Box<dyn JudgeClient>, CliError> {
    if args.mock {
        return Ok(Box::new(MockJudge::new()));
    }
    let url = args
        .judge_url
        .as_ref()
        .ok_or_else(|| CliError::usage("--judge-url is required unless --mock is set"))?;
    if args.judge_model.is_none() {
        return Err(CliError::usage("--judge-model is required unless --mock is set"));
    }
    Ok(Box::new(HttpJudge::new(url)))
}

fn config_for(args: &EvalArgs, mode: EvalMode) -> Result<EngineConfig, CliError> {
    let judge_model = match (&args.judge_model, args.mock) {
        (Some(model), _) => model.clone(),
        (None, true) => "mock".to_string(),
        (None, false) => return Err(CliError::usage("--judge-model is required unless --mock is set")),
    };
    let config = EngineConfig {
        cutoff: args.cutoff.unwrap_or_else(|| EngineConfig::default_cutoff(args.scale)),
        scale_granularity: args.scale,
        mode,
        judge_model,
        temperature: args.temperature,
        max_tokens: args.max_tokens,
        parallelism: args.parallelism,
    };
    config.check().map_err(CliError::usage)?;
    Ok(config)
}

fn open_store(args: &EvalArgs) -> Result<TrialStore, CliError> {
    let path = args.trials.clone().unwrap_or_else(|| args.out_dir.join("trials.jsonl"));
    let store = TrialStore::open(&path)?;
    for warning in store.warnings() {
        eprintln!("warning: {warning}");
    }
    Ok(store)
}

/// Maps an engine failure to an exit code, writing the resume manifest on a
/// partial run.
fn engine_error(e: EngineError, out_dir: &Path) -> CliError {
    match e {
        EngineError::Partial { ref manifest, ref failures, total_trials } => {
            let path = out_dir.join("resume_manifest.json");
            let doc = serde_json::json!({
                "missing_trials": manifest,
                "failures": failures,
                "total_trials": total_trials,
            });
            let note = match std::fs::create_dir_all(out_dir)
                .and_then(|_| std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()))
            {
                Ok(()) => format!("resume manifest written to {}", path.display()),
                Err(io) => format!("failed to write resume manifest: {io}"),
            };
            CliError { code: 1, message: format!("{e}\n{note}\nrerun with the same --trials file to resume") }
        }
        EngineError::Judge(judge) => judge.into(),
        EngineError::Precondition(_) | EngineError::Store(_) | EngineError::Battery(_) => {
            CliError::data(e.to_string())
        }
        EngineError::InvalidConfig(_) | EngineError::InvalidArgument(_) => CliError::usage(e.to_string()),
        other => CliError { code: 1, message: other.to_string() },
    }
}

fn fmt_metric(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".to_string())
}

fn print_summary_header() {
    println!(
        "{:<32} {:<16} {:>13} {:>18} {:>18}",
        "Method", "Model", "AVG Spearman", "AVG Kendall's Tau", "Pairwise Accuracy"
    );
}

fn print_summary_row(method: &str, model: &str, report: &RankingReport, marker: &str) {
    println!(
        "{:<32} {:<16} {:>13} {:>18} {:>18}{marker}",
        method,
        model,
        fmt_metric(report.avg_spearman),
        fmt_metric(report.avg_kendall),
        fmt_metric(report.pairwise_accuracy)
    );
}

fn export_both(
    report: &RankingReport,
    run: &EvalRunResult,
    dataset: &ttcw_core::domain::EvalDataset,
    method: &str,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let mut files = export_report(report, run, dataset, method, ExportFormat::Json, out_dir)?;
    files.extend(export_report(report, run, dataset, method, ExportFormat::Csv, out_dir)?);
    Ok(files)
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let battery = battery_for(&args.eval)?;
    let dataset = load_dataset(&args.eval.dataset)?;
    let config = config_for(&args.eval, args.mode)?;
    let judge = judge_for(&args.eval)?;
    let store = open_store(&args.eval)?;

    let run = run_dataset_with_battery(judge.as_ref(), &dataset, &battery, &config, &store)
        .map_err(|e| engine_error(e, &args.eval.out_dir))?;
    let report = build_report(&run, &dataset).map_err(|e| CliError::data(e.to_string()))?;
    let files = export_both(&report, &run, &dataset, config.mode.flag_name(), &args.eval.out_dir)?;

    print_summary_header();
    print_summary_row(config.mode.flag_name(), &config.judge_model, &report, "");
    println!(
        "\nrun {}: {} trials, reports in {}",
        run.run_id,
        run.trial_refs.len(),
        args.eval.out_dir.display()
    );
    for file in files {
        println!("  {}", file.display());
    }
    Ok(())
}

fn parse_cutoffs(input: &str) -> Result<Vec<i32>, CliError> {
    let cutoffs: Result<Vec<i32>, _> =
        input.split(',').map(|part| part.trim().parse::<i32>()).collect();
    let cutoffs = cutoffs.map_err(|_| CliError::usage(format!("cannot parse --cutoffs {input:?}")))?;
    if cutoffs.is_empty() {
        return Err(CliError::usage("--cutoffs must list at least one value"));
    }
    Ok(cutoffs)
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let cutoffs = parse_cutoffs(&args.cutoffs)?;
    let battery = battery_for(&args.eval)?;
    let dataset = load_dataset(&args.eval.dataset)?;
    let config = config_for(&args.eval, args.mode)?;
    let judge = judge_for(&args.eval)?;
    let store = open_store(&args.eval)?;

    let results =
        sweep_cutoff_with_battery(judge.as_ref(), &dataset, &battery, &config, &cutoffs, &store)
            .map_err(|e| engine_error(e, &args.eval.out_dir))?;

    let mut reports: BTreeMap<i32, RankingReport> = BTreeMap::new();
    for (cutoff, run) in &results {
        reports.insert(*cutoff, build_report(run, &dataset).map_err(|e| CliError::data(e.to_string()))?);
    }
    let best_cutoff = reports
        .iter()
        .max_by(|a, b| {
            let va = a.1.avg_spearman.unwrap_or(f64::NEG_INFINITY);
            let vb = b.1.avg_spearman.unwrap_or(f64::NEG_INFINITY);
            va.partial_cmp(&vb).expect("metric values are finite").then(b.0.cmp(a.0))
        })
        .map(|(c, _)| *c);

    std::fs::create_dir_all(&args.eval.out_dir)
        .map_err(|e| CliError::data(format!("{}: {e}", args.eval.out_dir.display())))?;
    let mut csv = String::from("Model,Cutoff,AVG_Spearman,AVG_KendallTau,Pairwise_Accuracy,Best\n");
    println!("cutoff sweep over {:?} (mode {})\n", cutoffs, config.mode.flag_name());
    print_summary_header();
    for (cutoff, report) in &reports {
        let best = Some(*cutoff) == best_cutoff;
        print_summary_row(
            &format!("cutoff {cutoff}"),
            &config.judge_model,
            report,
            if best { "  *best" } else { "" },
        );
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            config.judge_model,
            cutoff,
            fmt_metric(report.avg_spearman),
            fmt_metric(report.avg_kendall),
            fmt_metric(report.pairwise_accuracy),
            if best { "*" } else { "" }
        ));
        let run = &results[cutoff];
        let sub_dir = args.eval.out_dir.join(format!("cutoff_{cutoff}"));
        export_both(report, run, &dataset, config.mode.flag_name(), &sub_dir)?;
    }
    let csv_path = args.eval.out_dir.join("sweep.csv");
    std::fs::write(&csv_path, csv).map_err(|e| CliError::data(format!("{}: {e}", csv_path.display())))?;
    println!("\nsweep table written to {}", csv_path.display());
    Ok(())
}

/// Ablation labels in the order the comparison is reported.
const ABLATION_ROWS: [(&str, EvalMode); 4] = [
    ("Ours", EvalMode::ReferenceAnalyzeRate),
    ("Reference-Based Approach Only", EvalMode::ReferenceDirect),
    ("Analyze-Rate Prompting Only", EvalMode::SingleAnalyzeRate),
    ("Baseline", EvalMode::SingleDirect),
];

fn cmd_ablate(args: AblateArgs) -> Result<(), CliError> {
    let battery = battery_for(&args.eval)?;
    let dataset = load_dataset(&args.eval.dataset)?;
    let judge = judge_for(&args.eval)?;
    let store = open_store(&args.eval)?;

    let mut csv = String::from("Method,Model,AVG_Spearman,AVG_KendallTau,Pairwise_Accuracy\n");
    print_summary_header();
    for (label, mode) in ABLATION_ROWS {
        let config = config_for(&args.eval, mode)?;
        let run = run_dataset_with_battery(judge.as_ref(), &dataset, &battery, &config, &store)
            .map_err(|e| engine_error(e, &args.eval.out_dir))?;
        let report = build_report(&run, &dataset).map_err(|e| CliError::data(e.to_string()))?;
        print_summary_row(label, &config.judge_model, &report, "");
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            label,
            config.judge_model,
            fmt_metric(report.avg_spearman),
            fmt_metric(report.avg_kendall),
            fmt_metric(report.pairwise_accuracy)
        ));
        let sub_dir = args.eval.out_dir.join(mode.flag_name());
        export_both(&report, &run, &dataset, label, &sub_dir)?;
    }
    let csv_path = args.eval.out_dir.join("ablate.csv");
    std::fs::write(&csv_path, csv).map_err(|e| CliError::data(format!("{}: {e}", csv_path.display())))?;
    println!("\nablation table written to {}", csv_path.display());
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    if args.output == args.dataset {
        return Err(CliError::data("output path equals the input dataset; refusing to overwrite"));
    }
    if args.output.exists() {
        return Err(CliError::data(format!(
            "{} already exists; refusing to overwrite",
            args.output.display()
        )));
    }
    let mut dataset = load_dataset(&args.dataset)?;

    let judge: Box<dyn JudgeClient> = if args.mock {
        Box::new(StaticJudge::new("QUALITY: 0.5\nA mock generated story for offline pipelines."))
    } else {
        let url = args
            .judge_url
            .as_ref()
            .ok_or_else(|| CliError::usage("--judge-url is required unless --mock is set"))?;
        Box::new(HttpJudge::new(url))
    };

    let mut extracted = 0usize;
    if args.extract_plots {
        for plot in &mut dataset.plots {
            if plot.plot_text.is_some() {
                continue;
            }
            let reference = plot
                .texts
                .get(&plot.reference_system)
                .cloned()
                .ok_or_else(|| CliError::data(format!("plot {:?} has no reference text", plot.plot_id)))?;
            let text = extract_plot(judge.as_ref(), &reference, &args.extractor_model, args.max_tokens)
                .map_err(|e| engine_error(e, Path::new(".")))?;
            plot.plot_text = Some(text);
            extracted += 1;
        }
    }

    let mut added = 0usize;
    if let Some(models) = &args.models {
        let plots: Result<Vec<(String, String)>, CliError> = dataset
            .plots
            .iter()
            .map(|p| {
                let text = p.plot_text.clone().ok_or_else(|| {
                    CliError::data(format!(
                        "plot {:?} has no plot text; pass --extract-plots to derive one",
                        p.plot_id
                    ))
                })?;
                Ok((p.plot_id.clone(), text))
            })
            .collect();
        let plots = plots?;
        for model in models.split(',').map(str::trim).filter(|m| !m.is_empty()) {
            let generated =
                generate_candidates(judge.as_ref(), &plots, model, args.temperature, args.max_tokens)
                    .map_err(|e| engine_error(e, Path::new(".")))?;
            for ((plot_id, system), story) in generated {
                let plot = dataset
                    .plots
                    .iter_mut()
                    .find(|p| p.plot_id == plot_id)
                    .expect("generated plot ids come from the dataset");
                if plot.texts.contains_key(&system) {
                    return Err(CliError::data(format!(
                        "plot {plot_id:?} already has a text for system {system:?}; refusing to overwrite"
                    )));
                }
                plot.texts.insert(system, story);
                added += 1;
            }
        }
    }

    let violations = dataset.validate();
    if !violations.is_empty() {
        let detail: Vec<String> = violations.iter().map(|v| format!("  - {v}")).collect();
        return Err(CliError::data(format!("generated dataset fails validation:\n{}", detail.join("\n"))));
    }
    save_dataset(&dataset, &args.output)?;
    println!(
        "extracted {extracted} plot(s), added {added} candidate text(s); dataset written to {}",
        args.output.display()
    );
    Ok(())
}
