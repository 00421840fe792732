//! `deskrl sft`: supervised warm-up on scripted traces, one checkpoint per
//! epoch.

use std::path::PathBuf;

use clap::Args;
use deskrl_core::environment::{eval_split, generate_tasks, standard_vocab, GeneratorSpec};
use deskrl_core::minivm::VmConfig;
use deskrl_core::policy::{checkpoint_to_string, PolicyParams};
use deskrl_core::sft::{build_sft_dataset, sft_train_observed, SftConfig, SftDatasetSpec};
use serde::Deserialize;

use crate::util::{append_metrics, atomic_write, read_json, require_version, resolve_out, write_json, CliError};

#[derive(Args)]
pub struct SftArgs {
    /// Run config JSON: {version, seed, tasks, eval_stride, dataset, train}.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's epoch cap.
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory (falls back to DESKRL_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_stride() -> usize {
    4
}

#[derive(Deserialize)]
struct SftRunConfig {
    version: u32,
    seed: u64,
    /// Task-suite recipe.
    tasks: GeneratorSpec,
    /// Every stride-th task forms the measurement split.
    #[serde(default = "default_stride")]
    eval_stride: usize,
    dataset: SftDatasetSpec,
    train: SftConfig,
}

pub fn run(args: SftArgs) -> Result<(), CliError> {
    let out = resolve_out(args.out)?;
    let cfg: SftRunConfig = read_json(&args.config)?;
    require_version(&args.config, cfg.version, 1)?;
    if cfg.eval_stride == 0 {
        return Err(CliError::Input("eval_stride must be at least 1".into()));
    }
    let mut train_cfg = cfg.train.clone();
    if let Some(epochs) = args.epochs {
        train_cfg.epochs_max = epochs;
    }
    if train_cfg.epochs_max == 0 {
        return Err(CliError::Input("epoch cap must be at least 1".into()));
    }

    let tasks = generate_tasks(&cfg.tasks)?;
    let evals = eval_split(&tasks, cfg.eval_stride);
    let examples = build_sft_dataset(&tasks, &cfg.dataset);
    if examples.is_empty() {
        return Err(CliError::Input(
            "dataset spec produced no training examples (traces_per_task must be >= 1)".into(),
        ));
    }

    let mut params = PolicyParams::new(standard_vocab(), 2)?;
    let vm = VmConfig::default();
    let metrics_path = out.join("metrics.jsonl");
    let mut io_err: Option<CliError> = None;
    let reports = sft_train_observed(
        &mut params,
        &tasks,
        &evals,
        &examples,
        &train_cfg,
        &vm,
        cfg.seed,
        |epoch_params, report| {
            if io_err.is_some() {
                return;
            }
            let result = (|| -> Result<(), CliError> {
                let path = out.join(format!("epoch-{:03}.ckpt.json", report.epoch));
                atomic_write(&path, &checkpoint_to_string(epoch_params))?;
                append_metrics(&metrics_path, "sft", [(report.epoch as u64, report)])
            })();
            if let Err(e) = result {
                io_err = Some(e);
            }
        },
    )?;
    if let Some(e) = io_err {
        return Err(e);
    }

    atomic_write(&out.join("final.ckpt.json"), &checkpoint_to_string(&params))?;
    write_json(&out.join("epochs.json"), &reports)?;
    let last = reports.last().expect("at least one epoch ran");
    println!(
        "{} epochs on {} examples: cross entropy {:.4}, eval pass@1 {:.3}; checkpoints in {}",
        reports.len(),
        last.examples,
        last.train_cross_entropy,
        last.eval_pass1,
        out.display()
    );
    Ok(())
}
