//! Teacher-forced supervised warm-start.
//!
//! A dataset is built from teacher traces with two scaling axes: how many
//! tasks contribute (dataset size) and what fraction of each task's traces
//! are VERBOSE rather than CONCISE (style mix). Training ascends the mean
//! trace log-likelihood in fixed-size minibatches under a harmonically
//! decaying step size; per-example gradients inside a minibatch are computed
//! independently (parallelizable) and summed in example order, so results do
//! not depend on scheduling. Epoch order is a seeded permutation,
//! deterministic per (seed, epoch).
//!
//! After every epoch the trainer logs teacher-forced cross-entropy on the
//! training set and greedy pass@1 on an evaluation split; training stops at
//! the epoch budget or as soon as two consecutive epochs improve pass@1 by
//! less than a configurable number of percentage points.

use crate::curation::CorpusItem;
use crate::environment::{teacher_trace_variant, Task, TraceStyle};
use crate::exec::map_indexed;
use crate::minivm::VmConfig;
use crate::policy::{
    add_grad, grad_logprob, logprob_trace, sample, PolicyError, PolicyParams, SamplingConfig,
    SparseGrad, TokenId,
};
use crate::seeding::counter_rng;
use crate::verifier::{verify_rollout, Verdict};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One training example: a teacher trace for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub task_index: usize,
    pub style: TraceStyle,
    pub variant: u64,
    pub tokens: Vec<String>,
}

/// Dataset-shape axes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SftDatasetSpec {
    /// Trace variants generated per task.
    pub traces_per_task: usize,
    /// Fraction of each task's variants rendered VERBOSE (0.0 ..= 1.0).
    pub verbose_mix: f64,
}

/// Styles for variants `0..traces_per_task`: the first `round(mix * k)`
/// variants are VERBOSE, the rest CONCISE.
pub fn assign_styles(traces_per_task: usize, verbose_mix: f64) -> Vec<TraceStyle> {
    let n_verbose = (verbose_mix * traces_per_task as f64).round() as usize;
    (0..traces_per_task)
        .map(|j| if j < n_verbose { TraceStyle::Verbose } else { TraceStyle::Concise })
        .collect()
}

/// Builds the full dataset: every task contributes one trace per variant.
pub fn build_sft_dataset(tasks: &[Task], spec: &SftDatasetSpec) -> Vec<SftExample> {
    let styles = assign_styles(spec.traces_per_task, spec.verbose_mix);
    let mut examples = Vec::with_capacity(tasks.len() * spec.traces_per_task);
    for (task_index, task) in tasks.iter().enumerate() {
        for (j, style) in styles.iter().enumerate() {
            let trace = teacher_trace_variant(task, *style, j as u64);
            examples.push(SftExample {
                task_index,
                style: *style,
                variant: j as u64,
                tokens: trace.tokens,
            });
        }
    }
    examples
}

/// Bridges examples to the curation passes: the text is the prompt plus the
/// trace, the balance length is the trace length.
pub fn sft_corpus_items(examples: &[SftExample], tasks: &[Task]) -> Vec<CorpusItem> {
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let task = &tasks[ex.task_index];
            let mut words = task.prompt_tokens.clone();
            words.extend(ex.tokens.iter().cloned());
            CorpusItem {
                id: format!("sft-{i:05}"),
                text: words.join(" "),
                response_length: ex.tokens.len(),
            }
        })
        .collect()
}

/// Keeps only the examples whose bridged corpus ids survived curation.
pub fn filter_examples_by_ids(
    examples: Vec<SftExample>,
    surviving_ids: &[String],
) -> Vec<SftExample> {
    let keep: std::collections::BTreeSet<&str> =
        surviving_ids.iter().map(|s| s.as_str()).collect();
    examples
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(format!("sft-{i:05}").as_str()))
        .map(|(_, ex)| ex)
        .collect()
}

/// Training knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SftConfig {
    pub learning_rate: f64,
    /// Harmonic decay coefficient: epoch `e` steps with
    /// `learning_rate / (1 + lr_decay * e)`. Zero keeps the rate constant.
    pub lr_decay: f64,
    pub minibatch: usize,
    pub epochs_max: usize,
    /// Stop when pass@1 improves by fewer than this many percentage points
    /// over two consecutive epochs.
    pub plateau_points: f64,
    /// Token budget for the per-epoch evaluation rollouts.
    pub eval_budget: usize,
    /// Seeded rollouts per evaluation task (pass@1 is their mean).
    pub eval_rollouts: usize,
    /// Sampling temperature for the per-epoch evaluation. Greedy decoding is
    /// deliberately not used here: a policy trained on VERBOSE traces escapes
    /// the restatement loop only stochastically, so argmax decoding would
    /// spin in the loop until the budget and read as zero accuracy.
    pub eval_temperature: f64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            lr_decay: 0.35,
            minibatch: 8,
            epochs_max: 8,
            plateau_points: 0.5,
            eval_budget: 256,
            eval_rollouts: 4,
            // Evaluation samples below the training temperature: a tabular
            // policy has no generalization to lean on once a stray token
            // leaves the learned contexts, so the probe sharpens the
            // distribution the same way the downstream eval protocol does.
            eval_temperature: 0.6,
        }
    }
}

/// What one epoch looked like.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean per-token negative log-likelihood of the training traces.
    pub train_cross_entropy: f64,
    /// Sampled pass@1 estimate on the evaluation split.
    pub eval_pass1: f64,
    pub examples: usize,
}

/// Seeded Fisher-Yates permutation of `0..n`, stable per (seed, epoch).
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = counter_rng([seed, epoch, 0, 0]);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Fraction of tasks whose greedy decode verifies CORRECT.
pub fn greedy_pass1(
    params: &PolicyParams,
    tasks: &[Task],
    budget: usize,
    vm: &VmConfig,
) -> Result<f64, PolicyError> {
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let cfg = SamplingConfig { greedy: true, ..SamplingConfig::new(1.0, budget) };
    let outcomes: Vec<Result<bool, PolicyError>> = map_indexed(tasks.len(), |i| {
        let rollout = sample(params, &tasks[i], &cfg, crate::seeding::SeedStream::at(0, 0, 0, 0))?;
        Ok(verify_rollout(params, &tasks[i], &rollout, vm).verdict == Verdict::Correct)
    });
    let mut correct = 0usize;
    for o in outcomes {
        correct += usize::from(o?);
    }
    Ok(correct as f64 / tasks.len() as f64)
}

/// Unbiased pass@1 estimate: the fraction of `n` seeded rollouts per task
/// that verify CORRECT, averaged over tasks.
pub fn sampled_pass_fraction(
    params: &PolicyParams,
    tasks: &[Task],
    n: usize,
    temperature: f64,
    budget: usize,
    vm: &VmConfig,
    seed: u64,
) -> Result<f64, PolicyError> {
    if tasks.is_empty() || n == 0 {
        return Ok(0.0);
    }
    let cfg = SamplingConfig::new(temperature, budget);
    let total = tasks.len() * n;
    let outcomes: Vec<Result<bool, PolicyError>> = map_indexed(total, |i| {
        let task = i / n;
        let rollout_index = i % n;
        let stream = crate::seeding::SeedStream::at(seed, 0, task as u64, rollout_index as u64);
        let rollout = sample(params, &tasks[task], &cfg, stream)?;
        Ok(verify_rollout(params, &tasks[task], &rollout, vm).verdict == Verdict::Correct)
    });
    let mut correct = 0usize;
    for o in outcomes {
        correct += usize::from(o?);
    }
    Ok(correct as f64 / total as f64)
}

/// Mean per-token negative log-likelihood of the dataset under `params`.
fn dataset_cross_entropy(
    params: &PolicyParams,
    tasks: &[Task],
    ids: &[Vec<TokenId>],
    examples: &[SftExample],
) -> Result<f64, PolicyError> {
    let sums: Vec<Result<(f64, usize), PolicyError>> = map_indexed(examples.len(), |i| {
        let task = &tasks[examples[i].task_index];
        let lp = logprob_trace(params, task, &ids[i], 1.0)?;
        Ok((lp.iter().sum::<f64>(), lp.len()))
    });
    let mut total = 0.0;
    let mut count = 0usize;
    for s in sums {
        let (lp, len) = s?;
        total += lp;
        count += len;
    }
    Ok(-total / count.max(1) as f64)
}

/// Trains in place and returns one report per completed epoch.
pub fn sft_train(
    params: &mut PolicyParams,
    tasks: &[Task],
    eval_tasks: &[Task],
    examples: &[SftExample],
    cfg: &SftConfig,
    vm: &VmConfig,
    seed: u64,
) -> Result<Vec<EpochReport>, PolicyError> {
    sft_train_observed(params, tasks, eval_tasks, examples, cfg, vm, seed, |_, _| ())
}

/// [`sft_train`] with a hook invoked after every completed epoch, carrying
/// the freshly updated parameters and that epoch's report. Lets callers
/// checkpoint each epoch without retraining from scratch.
#[allow(clippy::too_many_arguments)]
pub fn sft_train_observed(
    params: &mut PolicyParams,
    tasks: &[Task],
    eval_tasks: &[Task],
    examples: &[SftExample],
    cfg: &SftConfig,
    vm: &VmConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&PolicyParams, &EpochReport),
) -> Result<Vec<EpochReport>, PolicyError> {
    assert!(cfg.minibatch >= 1, "minibatch must be at least 1");
    assert!(!examples.is_empty(), "empty dataset");
    let ids: Vec<Vec<TokenId>> = examples
        .iter()
        .map(|ex| params.token_ids(&ex.tokens))
        .collect::<Result<_, _>>()?;
    let mut reports: Vec<EpochReport> = Vec::new();
    for epoch in 0..cfg.epochs_max {
        // Harmonic step-size decay: full steps early while the policy is far
        // from the data, damped steps late so contexts a trace revisits many
        // times (the restatement loop) settle instead of oscillating.
        let lr = cfg.learning_rate / (1.0 + cfg.lr_decay * epoch as f64);
        let order = epoch_permutation(examples.len(), seed, epoch as u64);
        for mb in order.chunks(cfg.minibatch) {
            let grads: Vec<Result<SparseGrad, PolicyError>> = map_indexed(mb.len(), |k| {
                let ex = &examples[mb[k]];
                grad_logprob(params, &tasks[ex.task_index], &ids[mb[k]], 1.0)
            });
            // Per-example gradients are summed in example order (not
            // averaged), so the batch update is the same whether the
            // gradients were computed in parallel or one by one. Every token
            // occurrence carries equal weight; normalizing by trace length
            // instead would let short traces outvote long ones at shared
            // contexts and collapse the style mix.
            let mut acc = SparseGrad::new();
            for g in grads {
                add_grad(&mut acc, &g?, 1.0);
            }
            params.apply_update(&acc, lr);
        }
        let train_cross_entropy = dataset_cross_entropy(params, tasks, &ids, examples)?;
        let eval_pass1 = sampled_pass_fraction(
            params,
            eval_tasks,
            cfg.eval_rollouts,
            cfg.eval_temperature,
            cfg.eval_budget,
            vm,
            crate::seeding::mix_seed(seed, 1),
        )?;
        reports.push(EpochReport {
            epoch,
            train_cross_entropy,
            eval_pass1,
            examples: examples.len(),
        });
        on_epoch(params, &reports[epoch]);
        // Plateau: two consecutive epochs without a material gain. A score
        // of zero never counts as plateaued — the run simply has not started
        // scoring yet (the epoch budget still bounds it).
        if epoch >= 2 && reports[epoch].eval_pass1 > 0.0 {
            let gain = reports[epoch].eval_pass1 - reports[epoch - 2].eval_pass1;
            if gain < cfg.plateau_points / 100.0 {
                break;
            }
        }
    }
    Ok(reports)
}

/// One point on the dataset-scaling grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    /// Unique tasks contributing traces (the first scaling axis).
    pub dataset_tasks: usize,
    /// Trace variants per task (the second scaling axis).
    pub traces_per_task: usize,
    pub verbose_mix: f64,
    /// Final sampled pass@1 on the evaluation split.
    pub eval_pass1: f64,
    pub epochs_run: usize,
}

/// Trains a fresh copy of `base` for every (dataset size, traces-per-task)
/// combination and records the final evaluation score. Sizes index prefixes
/// of `tasks`; the verbose/concise mix is held fixed across the grid.
#[allow(clippy::too_many_arguments)]
pub fn sft_scaling_grid(
    base: &PolicyParams,
    tasks: &[Task],
    eval_tasks: &[Task],
    sizes: &[usize],
    traces_per_task: &[usize],
    verbose_mix: f64,
    cfg: &SftConfig,
    vm: &VmConfig,
    seed: u64,
) -> Result<Vec<ScalingPoint>, PolicyError> {
    let mut points = Vec::new();
    for &size in sizes {
        assert!(size <= tasks.len(), "grid size {size} exceeds suite {}", tasks.len());
        for &traces in traces_per_task {
            let spec = SftDatasetSpec { traces_per_task: traces, verbose_mix };
            let examples = build_sft_dataset(&tasks[..size], &spec);
            let mut params = base.clone();
            let reports =
                sft_train(&mut params, &tasks[..size], eval_tasks, &examples, cfg, vm, seed)?;
            let last = reports.last().expect("at least one epoch");
            points.push(ScalingPoint {
                dataset_tasks: size,
                traces_per_task: traces,
                verbose_mix,
                eval_pass1: last.eval_pass1,
                epochs_run: reports.len(),
            });
        }
    }
    Ok(points)
}
