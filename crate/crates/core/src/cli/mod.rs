//! Batch command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 some trials
//! failed, 3 nothing succeeded.

mod manifest;
mod plot;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::{match_points, mean_scores, MatchConfig, Scores};
use crate::hyperopt::{optimize, pipeline_objective, to_hyperparams, ScoredTrial, SearchSpace, N_INITIAL};
use crate::pipeline::{run_trial_detailed, PipelineConfig, TrialReport, STAGE_FINAL, STAGE_KINEMATIC, STAGE_VISION};

pub use manifest::{
    config_to_toml, default_config_toml, load_config, parse_config, LoadedTrial, RunManifest, TrialEntry,
    DEFAULT_RATE_HZ,
};
pub use plot::render_svg;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

pub const SUMMARY_FILE: &str = "summary.json";
pub const EVALUATION_TEXT: &str = "evaluation.txt";
pub const EVALUATION_JSON: &str = "evaluation.json";
pub const TUNED_CONFIG: &str = "tuned_config.toml";
pub const TUNE_TRACE: &str = "tune_trace.csv";
pub const TUNE_SUMMARY: &str = "tune_summary.json";

/// File name of a trial's report inside the output directory.
pub fn report_file_name(trial_id: &str) -> String {
    format!("{trial_id}.report.json")
}

#[derive(Debug, Parser)]
#[command(name = "surgseg", version, about = "Unsupervised gesture segmentation of bimanual tool trajectories")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Run manifest (TOML)
    pub manifest: PathBuf,
    /// Pipeline configuration (TOML); overrides the manifest's
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the manifest's
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the manifest's
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment every trial of a manifest and write one report per trial
    Segment {
        #[command(flatten)]
        run: RunArgs,
        /// Ignore feature files
        #[arg(long)]
        kinematics_only: bool,
        /// Leave the smoothed profiles out of the reports
        #[arg(long)]
        no_profiles: bool,
    },
    /// Score written reports against the transcriptions
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Matching tolerance in frames
        #[arg(long, default_value_t = 30)]
        delta: usize,
    },
    /// Tune n1, n2, alpha1, alpha2 and eps for mean F1
    Tune {
        #[command(flatten)]
        run: RunArgs,
        /// Number of objective evaluations (at least 5)
        #[arg(long, default_value_t = 30)]
        budget: usize,
        /// Matching tolerance in frames
        #[arg(long, default_value_t = 30)]
        delta: usize,
        /// Ignore feature files
        #[arg(long)]
        kinematics_only: bool,
    },
    /// Draw a report as SVG
    Plot {
        /// Report written by `segment`
        report: PathBuf,
        /// SVG path (default: the report path with an .svg extension)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let help = format!("Default configuration:\n\n{}", default_config_toml());
    let mut command = Cli::command().after_long_help(help.clone());
    for name in ["segment", "evaluate", "tune"] {
        command = command.mut_subcommand(name, |c| c.after_long_help(help.clone()));
    }
    let matches = match command.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    match cli.command {
        Command::Segment {
            run,
            kinematics_only,
            no_profiles,
        } => with_context(&run, |ctx| cmd_segment(ctx, kinematics_only, !no_profiles)),
        Command::Evaluate { run, delta } => match MatchConfig::new(delta) {
            Ok(d) => with_context(&run, |ctx| cmd_evaluate(ctx, &d)),
            Err(e) => usage(e),
        },
        Command::Tune {
            run,
            budget,
            delta,
            kinematics_only,
        } => {
            if budget < N_INITIAL {
                return usage(format!("--budget must be at least {N_INITIAL}"));
            }
            match MatchConfig::new(delta) {
                Ok(d) => with_context(&run, |ctx| cmd_tune(ctx, budget, &d, kinematics_only)),
                Err(e) => usage(e),
            }
        }
        Command::Plot { report, out } => {
            let out = out.unwrap_or_else(|| report.with_extension("svg"));
            cmd_plot(&report, &out)
        }
    }
}

fn usage(e: impl std::fmt::Display) -> i32 {
    eprintln!("error: {e}");
    EXIT_USAGE
}

fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}

fn exit_code(succeeded: usize, failed: usize) -> i32 {
    match (succeeded, failed) {
        (_, 0) if succeeded > 0 => EXIT_OK,
        (0, _) => EXIT_FAILURE,
        _ => EXIT_PARTIAL,
    }
}

/// Manifest, configuration and output settings after applying flags.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub manifest: RunManifest,
    pub config: PipelineConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub jobs: usize,
}

impl RunContext {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let manifest = RunManifest::load(&args.manifest)?;
        let seed = args.seed.unwrap_or(manifest.seed);
        let config = match args.config.as_ref().or(manifest.config.as_ref()) {
            Some(p) => load_config(p)?,
            None => PipelineConfig::default(),
        }
        .with_seed(seed);
        let output_dir = args.out.clone().unwrap_or_else(|| manifest.output_dir.clone());
        Ok(Self {
            manifest,
            config,
            output_dir,
            seed,
            jobs: args.jobs,
        })
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.output_dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn with_context(args: &RunArgs, f: impl FnOnce(&RunContext) -> i32 + Send) -> i32 {
    let ctx = match RunContext::resolve(args) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    match ctx.pool() {
        Ok(pool) => pool.install(|| f(&ctx)),
        Err(e) => usage(e),
    }
}

/// Report of one trial as written by `segment`.
pub fn segment_trial(
    entry: &TrialEntry,
    ctx: &RunContext,
    kinematics_only: bool,
    include_profiles: bool,
) -> Result<TrialReport> {
    let trial = entry.load(ctx.manifest.rate_hz, !kinematics_only)?;
    let outcome = run_trial_detailed(&trial.trajectory, trial.features.as_ref(), &ctx.config)?;
    let mut report = outcome.to_report(ctx.seed, include_profiles);
    report.ground_truth = trial.transcription.map(|t| t.boundaries());
    Ok(report)
}

#[derive(Serialize)]
struct SegmentSummary<'a> {
    seed: u64,
    succeeded: Vec<BTreeMap<&'a str, serde_json::Value>>,
    failed: Vec<BTreeMap<&'a str, String>>,
}

pub fn cmd_segment(ctx: &RunContext, kinematics_only: bool, include_profiles: bool) -> i32 {
    if let Err(e) = fs::create_dir_all(&ctx.output_dir) {
        eprintln!("error: {}", Error::io(&ctx.output_dir, e));
        return EXIT_FAILURE;
    }
    let results: Vec<Result<TrialReport>> = ctx
        .manifest
        .trials
        .par_iter()
        .map(|t| segment_trial(t, ctx, kinematics_only, include_profiles))
        .collect();
    let mut summary = SegmentSummary {
        seed: ctx.seed,
        succeeded: Vec::new(),
        failed: Vec::new(),
    };
    for (entry, result) in ctx.manifest.trials.iter().zip(results) {
        let written = result.and_then(|r| {
            ctx.write(&report_file_name(&entry.id), &r.to_json()?)?;
            Ok(r)
        });
        match written {
            Ok(r) => {
                let n_final = r.stage(STAGE_FINAL).map_or(0, |s| s.points.len());
                summary.succeeded.push(BTreeMap::from([
                    ("id", serde_json::Value::from(entry.id.as_str())),
                    ("final_points", serde_json::Value::from(n_final)),
                ]));
            }
            Err(e) => {
                eprintln!("error: trial {}: {e}", entry.id);
                summary
                    .failed
                    .push(BTreeMap::from([("id", entry.id.clone()), ("error", e.to_string())]));
            }
        }
    }
    let (ok, failed) = (summary.succeeded.len(), summary.failed.len());
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    if let Err(e) = ctx.write(SUMMARY_FILE, &json) {
        eprintln!("error: {e}");
        return EXIT_FAILURE;
    }
    println!("segmented {ok} of {} trials into {}", ok + failed, ctx.output_dir.display());
    exit_code(ok, failed)
}

const MODALITIES: [(&str, &str); 3] = [
    ("kinematics", STAGE_KINEMATIC),
    ("vision", STAGE_VISION),
    ("kinematics+vision", STAGE_FINAL),
];

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationRow {
    pub modality: String,
    pub task: String,
    pub trials: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialEvaluation {
    pub id: String,
    pub task: String,
    pub scores: BTreeMap<String, Scores>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub delta: usize,
    pub rows: Vec<EvaluationRow>,
    pub trials: Vec<TrialEvaluation>,
    pub skipped: Vec<String>,
    pub failed: Vec<String>,
}

fn task_label(entry: &TrialEntry) -> String {
    entry.task.map_or_else(|| "unspecified".to_string(), |t| t.as_str().to_string())
}

fn evaluate_trial(entry: &TrialEntry, ctx: &RunContext, delta: &MatchConfig) -> Result<Option<TrialEvaluation>> {
    let truth = match entry.load_transcription() {
        Ok(Some(t)) => t.boundaries(),
        Ok(None) => {
            warn(format!("trial {}: skipped, no transcription", entry.id));
            return Ok(None);
        }
        Err(e) => {
            warn(format!("trial {}: skipped, transcription unreadable: {e}", entry.id));
            return Ok(None);
        }
    };
    let path = ctx.output_dir.join(report_file_name(&entry.id));
    let report = TrialReport::from_json(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)?;
    let scores = MODALITIES
        .iter()
        .filter_map(|(modality, stage)| {
            report
                .stage(stage)
                .map(|s| (modality.to_string(), Scores::from(&match_points(&s.points, &truth, delta))))
        })
        .collect();
    Ok(Some(TrialEvaluation {
        id: entry.id.clone(),
        task: task_label(entry),
        scores,
    }))
}

fn summary_rows(trials: &[TrialEvaluation]) -> Vec<EvaluationRow> {
    let mut tasks: Vec<&str> = trials.iter().map(|t| t.task.as_str()).collect();
    tasks.sort_unstable();
    tasks.dedup();
    let mut rows = Vec::new();
    for (modality, _) in MODALITIES {
        let mut push = |task: &str, filter: &dyn Fn(&TrialEvaluation) -> bool| {
            let s: Vec<Scores> = trials
                .iter()
                .filter(|t| filter(t))
                .filter_map(|t| t.scores.get(modality).copied())
                .collect();
            if let Some(m) = mean_scores(&s) {
                rows.push(EvaluationRow {
                    modality: modality.to_string(),
                    task: task.to_string(),
                    trials: s.len(),
                    recall: m.recall,
                    precision: m.precision,
                    f1: m.f1,
                });
            }
        };
        for task in &tasks {
            push(task, &|t| t.task == *task);
        }
        push("mean", &|_| true);
    }
    rows
}

/// Plain-text results table: modality and task per row.
pub fn format_table(report: &EvaluationReport) -> String {
    let mut out = format!("Segmentation results (delta = {} frames)\n", report.delta);
    let _ = writeln!(
        out,
        "{:<18} {:<15} {:>6} {:>7} {:>9} {:>7}",
        "modality", "task", "trials", "recall", "precision", "f1"
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<18} {:<15} {:>6} {:>7.3} {:>9.3} {:>7.3}",
            r.modality, r.task, r.trials, r.recall, r.precision, r.f1
        );
    }
    out
}

pub fn cmd_evaluate(ctx: &RunContext, delta: &MatchConfig) -> i32 {
    let results: Vec<Result<Option<TrialEvaluation>>> = ctx
        .manifest
        .trials
        .par_iter()
        .map(|t| evaluate_trial(t, ctx, delta))
        .collect();
    let mut report = EvaluationReport {
        delta: delta.delta,
        rows: Vec::new(),
        trials: Vec::new(),
        skipped: Vec::new(),
        failed: Vec::new(),
    };
    for (entry, r) in ctx.manifest.trials.iter().zip(results) {
        match r {
            Ok(Some(t)) => report.trials.push(t),
            Ok(None) => report.skipped.push(entry.id.clone()),
            Err(e) => {
                eprintln!("error: trial {}: {e}", entry.id);
                report.failed.push(entry.id.clone());
            }
        }
    }
    report.rows = summary_rows(&report.trials);
    let text = format_table(&report);
    print!("{text}");
    let json = serde_json::to_string_pretty(&report).expect("evaluation serializes");
    let written = fs::create_dir_all(&ctx.output_dir)
        .map_err(|e| Error::io(&ctx.output_dir, e))
        .and_then(|_| ctx.write(EVALUATION_TEXT, &text))
        .and_then(|_| ctx.write(EVALUATION_JSON, &json));
    if let Err(e) = written {
        eprintln!("error: {e}");
        return EXIT_FAILURE;
    }
    exit_code(report.trials.len(), report.failed.len())
}

#[derive(Serialize)]
struct TuneSummary {
    best_f1: f64,
    hyperparams: crate::pipeline::Hyperparams,
    budget: usize,
    seed: u64,
    delta: usize,
    trials: Vec<String>,
}

pub fn cmd_tune(ctx: &RunContext, budget: usize, delta: &MatchConfig, kinematics_only: bool) -> i32 {
    let loaded: Vec<Result<LoadedTrial>> = ctx
        .manifest
        .trials
        .par_iter()
        .map(|t| t.load(ctx.manifest.rate_hz, !kinematics_only))
        .collect();
    let mut trials = Vec::new();
    let mut ids = Vec::new();
    let mut failed = 0;
    for (entry, r) in ctx.manifest.trials.iter().zip(loaded) {
        match r {
            Ok(LoadedTrial {
                transcription: Some(t),
                trajectory,
                features,
            }) => {
                ids.push(entry.id.clone());
                trials.push(ScoredTrial {
                    trajectory,
                    features,
                    boundaries: t.boundaries(),
                });
            }
            Ok(_) => warn(format!("trial {}: skipped, no transcription", entry.id)),
            Err(e) => {
                eprintln!("error: trial {}: {e}", entry.id);
                failed += 1;
            }
        }
    }
    if trials.is_empty() {
        eprintln!("error: no trial with ground truth to tune on");
        return EXIT_FAILURE;
    }
    let space = SearchSpace::pipeline_default();
    let objective = pipeline_objective(&trials, &ctx.config, *delta);
    let result = match optimize(objective, &space, budget, ctx.seed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let h = to_hyperparams(&result.best_params).expect("pipeline space has five dimensions");
    let best = ctx.config.clone().with_hyperparams(&h);
    let summary = TuneSummary {
        best_f1: result.best_score,
        hyperparams: h,
        budget,
        seed: ctx.seed,
        delta: delta.delta,
        trials: ids,
    };
    let written = fs::create_dir_all(&ctx.output_dir)
        .map_err(|e| Error::io(&ctx.output_dir, e))
        .and_then(|_| config_to_toml(&best))
        .and_then(|toml| ctx.write(TUNED_CONFIG, &toml))
        .and_then(|_| ctx.write(TUNE_TRACE, &result.trace_csv(&space)))
        .and_then(|_| ctx.write(TUNE_SUMMARY, &serde_json::to_string_pretty(&summary)?));
    if let Err(e) = written {
        eprintln!("error: {e}");
        return EXIT_FAILURE;
    }
    println!(
        "best mean F1 {:.4} with n1={} n2={} alpha1={} alpha2={} eps={}",
        result.best_score, h.n1, h.n2, h.alpha1, h.alpha2, h.eps
    );
    if failed > 0 {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

pub fn cmd_plot(report: &Path, out: &Path) -> i32 {
    let rendered = fs::read_to_string(report)
        .map_err(|e| Error::io(report, e))
        .and_then(|s| TrialReport::from_json(&s))
        .map(|r| render_svg(&r));
    let result = rendered.and_then(|svg| fs::write(out, svg).map_err(|e| Error::io(out, e)));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
