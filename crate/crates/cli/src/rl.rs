//! `deskrl rl`: drives a stage plan from an initial checkpoint, one stage at
//! a time, checkpointing at every stage boundary. Stage seeds are keyed by
//! stage id, so resuming from the last completed stage reproduces the
//! uninterrupted run bit for bit.

use std::path::{Path, PathBuf};

use clap::Args;
use deskrl_core::curriculum::{
    default_pipeline, run_pipeline, validate_stages, PipelineConfig, PipelineError, StageConfig,
    StagePools, StageReport,
};
use deskrl_core::environment::{eval_split, generate_tasks, GeneratorSpec};
use deskrl_core::minivm::VmConfig;
use deskrl_core::policy::{checkpoint_to_string, load_checkpoint};
use serde::Deserialize;

use crate::util::{append_metrics, atomic_write, read_json, require_version, resolve_out, write_json, CliError};

#[derive(Args)]
pub struct RlArgs {
    /// Run config JSON: {version, seed, math_tasks?, code_tasks?,
    /// eval_stride, pipeline}.
    #[arg(long)]
    config: PathBuf,
    /// Initial policy checkpoint.
    #[arg(long)]
    init: PathBuf,
    /// Stage plan: a JSON array of stage configs, or the literal `default`
    /// for the built-in six-stage plan.
    #[arg(long)]
    stages: String,
    /// Skip stages whose checkpoint and report already exist in the output
    /// directory.
    #[arg(long)]
    resume: bool,
    /// Output directory (falls back to DESKRL_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_stride() -> usize {
    4
}

#[derive(Deserialize)]
struct RlRunConfig {
    version: u32,
    seed: u64,
    math_tasks: Option<GeneratorSpec>,
    code_tasks: Option<GeneratorSpec>,
    /// Every stride-th task forms the held-out measurement split.
    #[serde(default = "default_stride")]
    eval_stride: usize,
    #[serde(default)]
    pipeline: PipelineConfig,
}

fn stage_paths(out: &Path, stage_id: usize) -> (PathBuf, PathBuf) {
    (
        out.join(format!("stage-{stage_id:02}.ckpt.json")),
        out.join(format!("stage-{stage_id:02}.report.json")),
    )
}

pub fn run(args: RlArgs) -> Result<(), CliError> {
    let out = resolve_out(args.out)?;
    let cfg: RlRunConfig = read_json(&args.config)?;
    require_version(&args.config, cfg.version, 1)?;
    if cfg.eval_stride == 0 {
        return Err(CliError::Input("eval_stride must be at least 1".into()));
    }
    let plan: Vec<StageConfig> = if args.stages == "default" {
        default_pipeline()
    } else {
        read_json(Path::new(&args.stages))?
    };
    validate_stages(&plan)?;

    let mut pools = StagePools::default();
    if let Some(spec) = &cfg.math_tasks {
        let tasks = generate_tasks(spec)?;
        pools.math_eval = eval_split(&tasks, cfg.eval_stride);
        pools.math_train = tasks;
    }
    if let Some(spec) = &cfg.code_tasks {
        let tasks = generate_tasks(spec)?;
        pools.code_eval = eval_split(&tasks, cfg.eval_stride);
        pools.code_train = tasks;
    }

    let mut params = load_checkpoint(&args.init)?;
    let vm = VmConfig::default();
    let metrics_path = out.join("metrics.jsonl");
    let mut reports: Vec<StageReport> = Vec::new();
    for stage in &plan {
        let (ckpt_path, report_path) = stage_paths(&out, stage.stage_id);
        if args.resume && ckpt_path.exists() && report_path.exists() {
            params = load_checkpoint(&ckpt_path)?;
            let report: StageReport = read_json(&report_path)?;
            println!(
                "stage {} resumed from {} (end eval {:.3})",
                stage.stage_id,
                ckpt_path.display(),
                report.end_eval
            );
            reports.push(report);
            continue;
        }
        match run_pipeline(
            params.clone(),
            std::slice::from_ref(stage),
            &pools,
            &cfg.pipeline,
            &vm,
            cfg.seed,
        ) {
            Ok((next, mut stage_reports)) => {
                params = next;
                let report = stage_reports.pop().expect("one stage in, one report out");
                atomic_write(&ckpt_path, &checkpoint_to_string(&params))?;
                write_json(&report_path, &report)?;
                append_metrics(
                    &metrics_path,
                    "rl",
                    report.metrics.iter().map(|m| (m.step, m)),
                )?;
                println!(
                    "stage {} ({:?} @ {} tokens, {:?}): eval {:.3} -> {:.3} in {} steps{}",
                    report.stage_id,
                    report.domain,
                    report.budget,
                    report.overlong,
                    report.start_eval,
                    report.end_eval,
                    report.steps_run,
                    if report.early_stopped { " (early stop)" } else { "" }
                );
                reports.push(report);
            }
            Err(PipelineError::Diverged { stage_id, step, last_good, .. }) => {
                let last_good_path = out.join("last-good.ckpt.json");
                atomic_write(&last_good_path, &checkpoint_to_string(&last_good))?;
                write_json(&out.join("reports.json"), &reports)?;
                return Err(CliError::Diverged(format!(
                    "stage {stage_id} diverged at step {step}; last good checkpoint kept at {}",
                    last_good_path.display()
                )));
            }
            Err(e) => return Err(e.into()),
        }
    }

    atomic_write(&out.join("final.ckpt.json"), &checkpoint_to_string(&params))?;
    write_json(&out.join("reports.json"), &reports)?;
    println!("{} stages complete; final checkpoint in {}", reports.len(), out.display());
    Ok(())
}
