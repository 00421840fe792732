//! `deskrl eval`: builds or ingests an outcome matrix, then reports avg@n,
//! pass@K for each K, and a solve-rate histogram as JSON plus CSV.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{ArgGroup, Args};
use deskrl_core::environment::eval_split;
use deskrl_core::evalkit::{
    avg_at_n, collect_outcomes, export_outcomes, ingest_outcomes, pass_at_k, solve_rate_histogram,
    AvgAtN, OutcomeFormat, OutcomeMatrix, PassAtKEstimate, SolveRateReport,
};
use deskrl_core::minivm::VmConfig;
use deskrl_core::policy::{load_checkpoint, SamplingConfig};
use deskrl_core::seeding::mix_seed;
use serde::Serialize;

use crate::util::{atomic_write, load_tasks, resolve_out, write_json, CliError};

#[derive(Args)]
#[command(group(
    ArgGroup::new("source").required(true).args(["checkpoint", "outcomes"])
))]
pub struct EvalArgs {
    /// Policy checkpoint to sample from (requires --tasks).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Pre-recorded outcome matrix to analyze instead of sampling.
    #[arg(long)]
    outcomes: Option<PathBuf>,
    /// Encoding of the --outcomes file.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Task-suite recipe to evaluate on (with --checkpoint).
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Keep every stride-th task (1 keeps all).
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Samples drawn per task — the outcome-matrix width N.
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Subsample size for the avg@n estimate.
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// K values for pass@K, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    k: Vec<usize>,
    /// Subsampling repetitions for both estimators.
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Sampling temperature (with --checkpoint).
    #[arg(long, default_value_t = 0.6)]
    temperature: f64,
    /// Nucleus cutoff (with --checkpoint).
    #[arg(long = "top-p", default_value_t = 0.95)]
    top_p: f64,
    /// Token budget per rollout (with --checkpoint).
    #[arg(long, default_value_t = 256)]
    budget: usize,
    /// Seed for sampling and for the subsampling estimators.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (falls back to DESKRL_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalSummary {
    accuracy: f64,
    avg_at_n: AvgAtN,
    pass_at_k: Vec<PassAtKEstimate>,
    histogram: SolveRateReport,
}

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let out = resolve_out(args.out)?;
    let vm = VmConfig::default();
    let matrix: OutcomeMatrix = if let Some(ckpt) = &args.checkpoint {
        let tasks_path = args
            .tasks
            .as_ref()
            .ok_or_else(|| CliError::Input("--tasks is required with --checkpoint".into()))?;
        if args.stride == 0 {
            return Err(CliError::Input("--stride must be at least 1".into()));
        }
        let tasks = eval_split(&load_tasks(tasks_path)?, args.stride);
        if tasks.is_empty() {
            return Err(CliError::Input("task recipe produced no tasks at this stride".into()));
        }
        let params = load_checkpoint(ckpt)?;
        let sampling = SamplingConfig {
            top_p: Some(args.top_p),
            ..SamplingConfig::new(args.temperature, args.budget)
        };
        let matrix = collect_outcomes(&params, &tasks, &sampling, args.samples, &vm, args.seed)?;
        std::fs::create_dir_all(&out)?;
        export_outcomes(&matrix, out.join("outcomes.csv"), OutcomeFormat::Csv)?;
        matrix
    } else {
        let path = args.outcomes.as_ref().expect("clap enforces one source");
        let format: OutcomeFormat = args.format.parse()?;
        ingest_outcomes(path, format)?
    };

    let avg = avg_at_n(&matrix, args.n, args.reps, mix_seed(args.seed, 1))?;
    let mut passes = Vec::new();
    for &k in &args.k {
        passes.push(pass_at_k(&matrix, k, args.reps, mix_seed(args.seed, 2))?);
    }
    let edges: Vec<f64> = (0..=10).map(|i| f64::from(i) / 10.0).collect();
    let histogram = solve_rate_histogram(&matrix, &edges)?;

    let mut pass_csv = String::from("k,estimate,closed_form\n");
    for p in &passes {
        let _ = writeln!(pass_csv, "{},{},{}", p.k, p.estimate, p.closed_form);
    }
    atomic_write(&out.join("pass_at_k.csv"), &pass_csv)?;

    let mut avg_csv = String::from("n,repetitions,mean,std,exhaustive\n");
    let _ = writeln!(avg_csv, "{},{},{},{},{}", avg.n, avg.repetitions, avg.mean, avg.std, avg.exhaustive);
    atomic_write(&out.join("avg_at_n.csv"), &avg_csv)?;

    let mut hist_csv = String::from("bucket_low,bucket_high,count\n");
    for (i, count) in histogram.bucket_counts.iter().enumerate() {
        let _ = writeln!(hist_csv, "{},{},{count}", edges[i], edges[i + 1]);
    }
    atomic_write(&out.join("solve_rates.csv"), &hist_csv)?;

    let summary = EvalSummary { accuracy: matrix.accuracy(), avg_at_n: avg, pass_at_k: passes, histogram };
    write_json(&out.join("metrics.json"), &summary)?;

    let pass_line: Vec<String> = summary
        .pass_at_k
        .iter()
        .map(|p| format!("pass@{}={:.3}", p.k, p.estimate))
        .collect();
    println!(
        "{} problems x {} samples: avg@{} = {:.3} (std {:.4}); {}",
        matrix.problem_count(),
        matrix.samples_per_problem(),
        summary.avg_at_n.n,
        summary.avg_at_n.mean,
        summary.avg_at_n.std,
        pass_line.join(", ")
    );
    Ok(())
}
