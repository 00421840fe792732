//! Group-normalized, strictly on-policy policy-gradient training.
//!
//! Each step samples a fresh group of rollouts per prompt from the current
//! parameters, scores them with the rule-based verifier, and normalizes
//! rewards within each group: `A_i = (r_i - mean) / std` with the population
//! standard deviation. Groups whose rewards carry no signal are skipped
//! entirely — fewer than two scoreable rollouts, or a reward spread at or
//! below [`ZERO_STD`]. Because sampling and the update use the same
//! parameters and the same temperature, importance ratios are identically 1
//! and the objective is simply advantage-weighted log-likelihood:
//!
//! `J = mean over kept groups of (sum_i sum_t A_i * log pi(o_{i,t})) / (sum_i |o_i|)`
//!
//! The token denominator is shared across the group, so long rollouts do not
//! get diluted per-token credit relative to short ones. Over-budget rollouts
//! are handled per [`OverlongMode`]: `FILTER` removes them from statistics,
//! loss, and denominator; `PENALTY` keeps them at reward 0. A batch in which
//! nothing truncates is bit-identical under the two modes.
//!
//! All randomness is counter-seeded per (step, prompt, rollout), so the
//! parallel and sequential executors produce the same batch.

use crate::environment::Task;
use crate::exec::map_indexed;
use crate::minivm::VmConfig;
use crate::policy::{
    add_grad, entropy_trace, grad_logprob, grad_norm, logprob_trace, sample, PolicyError,
    PolicyParams, Rollout, SamplingConfig, SparseGrad,
};
use crate::seeding::SeedStream;
use crate::verifier::{reward_assign, verify_rollout, OverlongMode, RewardScore, Verdict};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reward spreads at or below this are treated as zero signal.
pub const ZERO_STD: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GrpoError {
    /// Every group in the batch was skipped; there is nothing to learn from.
    #[error("no group in the batch carries a learning signal")]
    EmptyBatch,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Group-normalized advantages for one prompt's rollouts.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupAdvantages {
    /// One entry per rollout; masked rollouts read 0.
    pub advantages: Vec<f64>,
    /// True when the group carries no signal and must not contribute.
    pub skipped: bool,
    pub mean: f64,
    pub std: f64,
}

/// Normalizes rewards within one group. Masked entries are excluded from the
/// mean/std and get advantage 0. The group is skipped when fewer than two
/// entries remain or the population std is at or below [`ZERO_STD`].
pub fn compute_advantages(rewards: &[f64], masked: &[bool]) -> GroupAdvantages {
    assert_eq!(rewards.len(), masked.len(), "rewards and mask must align");
    let kept: Vec<f64> = rewards
        .iter()
        .zip(masked)
        .filter(|(_, m)| !**m)
        .map(|(r, _)| *r)
        .collect();
    let skipped_out = |mean: f64, std: f64| GroupAdvantages {
        advantages: vec![0.0; rewards.len()],
        skipped: true,
        mean,
        std,
    };
    if kept.len() < 2 {
        return skipped_out(kept.first().copied().unwrap_or(0.0), 0.0);
    }
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    let var = kept.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / kept.len() as f64;
    let std = var.sqrt();
    if std <= ZERO_STD {
        return skipped_out(mean, std);
    }
    let advantages = rewards
        .iter()
        .zip(masked)
        .map(|(r, m)| if *m { 0.0 } else { (r - mean) / std })
        .collect();
    GroupAdvantages { advantages, skipped: false, mean, std }
}

/// One prompt's sampled group, scored and reward-assigned.
#[derive(Clone, Debug)]
pub struct RolloutGroup {
    pub task_index: usize,
    pub rollouts: Vec<Rollout>,
    pub scores: Vec<RewardScore>,
    pub rewards: Vec<f64>,
    pub masked: Vec<bool>,
    /// Sum of per-position full-distribution entropies, per rollout.
    pub entropy_sums: Vec<f64>,
}

/// Samples and scores `group_size` rollouts for every task. Work is spread
/// over the executor with one counter seed per (step, prompt, rollout), so
/// the result is independent of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn sample_groups(
    params: &PolicyParams,
    tasks: &[Task],
    group_size: usize,
    sampling: &SamplingConfig,
    vm: &VmConfig,
    mode: OverlongMode,
    run_seed: u64,
    step: u64,
) -> Result<Vec<RolloutGroup>, GrpoError> {
    struct Item {
        rollout: Rollout,
        score: RewardScore,
        reward: f64,
        masked: bool,
        entropy_sum: f64,
    }
    let n = tasks.len() * group_size;
    let items: Vec<Result<Item, PolicyError>> = map_indexed(n, |i| {
        let prompt = i / group_size;
        let rollout_index = i % group_size;
        let task = &tasks[prompt];
        let stream = SeedStream::at(run_seed, step, prompt as u64, rollout_index as u64);
        let rollout = sample(params, task, sampling, stream)?;
        let score = verify_rollout(params, task, &rollout, vm);
        let (reward, masked) = reward_assign(&score, rollout.truncated, mode);
        let entropy_sum = entropy_trace(params, task, &rollout.tokens, sampling.temperature)?
            .iter()
            .sum();
        Ok(Item { rollout, score, reward, masked, entropy_sum })
    });
    let mut groups: Vec<RolloutGroup> = (0..tasks.len())
        .map(|t| RolloutGroup {
            task_index: t,
            rollouts: Vec::with_capacity(group_size),
            scores: Vec::with_capacity(group_size),
            rewards: Vec::with_capacity(group_size),
            masked: Vec::with_capacity(group_size),
            entropy_sums: Vec::with_capacity(group_size),
        })
        .collect();
    for (i, item) in items.into_iter().enumerate() {
        let item = item?;
        let g = &mut groups[i / group_size];
        g.rollouts.push(item.rollout);
        g.scores.push(item.score);
        g.rewards.push(item.reward);
        g.masked.push(item.masked);
        g.entropy_sums.push(item.entropy_sum);
    }
    Ok(groups)
}

/// Objective value and gradient of one batch.
#[derive(Debug)]
pub struct GrpoTerms {
    pub objective: f64,
    pub grad: SparseGrad,
    pub groups_total: usize,
    pub groups_skipped: usize,
}

/// Computes the batch objective and its gradient by re-scoring every kept
/// rollout under `params` at `temperature`. On-policy sampling guarantees the
/// re-scored log-probabilities equal the ones recorded at sampling time.
pub fn grpo_terms(
    params: &PolicyParams,
    tasks: &[Task],
    groups: &[RolloutGroup],
    temperature: f64,
) -> Result<GrpoTerms, GrpoError> {
    let mut objective = 0.0;
    let mut grad: SparseGrad = SparseGrad::new();
    let mut kept_groups = 0usize;
    let mut per_group: Vec<(usize, GroupAdvantages, f64)> = Vec::new();
    for (gi, group) in groups.iter().enumerate() {
        let adv = compute_advantages(&group.rewards, &group.masked);
        if adv.skipped {
            continue;
        }
        let token_count: usize = group
            .rollouts
            .iter()
            .zip(&group.masked)
            .filter(|(_, m)| !**m)
            .map(|(r, _)| r.len())
            .sum();
        kept_groups += 1;
        per_group.push((gi, adv, token_count as f64));
    }
    if kept_groups == 0 {
        return Err(GrpoError::EmptyBatch);
    }
    for (gi, adv, tokens) in &per_group {
        let group = &groups[*gi];
        let task = &tasks[group.task_index];
        let mut group_obj = 0.0;
        for (i, rollout) in group.rollouts.iter().enumerate() {
            if group.masked[i] || adv.advantages[i] == 0.0 {
                continue;
            }
            let lp_sum: f64 = logprob_trace(params, task, &rollout.tokens, temperature)?
                .iter()
                .sum();
            group_obj += adv.advantages[i] * lp_sum;
            let g = grad_logprob(params, task, &rollout.tokens, temperature)?;
            add_grad(&mut grad, &g, adv.advantages[i] / (tokens * kept_groups as f64));
        }
        objective += group_obj / tokens;
    }
    objective /= kept_groups as f64;
    Ok(GrpoTerms {
        objective,
        grad,
        groups_total: groups.len(),
        groups_skipped: groups.len() - kept_groups,
    })
}

/// Everything logged about one training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStepMetrics {
    pub step: u64,
    pub stage: usize,
    /// Fraction of all sampled rollouts verified CORRECT.
    pub mean_reward: f64,
    /// Length-weighted mean per-token entropy of the sampling distribution.
    pub entropy: f64,
    pub mean_response_len: f64,
    pub truncation_rate: f64,
    pub groups_total: usize,
    pub groups_skipped: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub temperature: f64,
    pub budget: usize,
}

/// Knobs for one training step (seeds and budgets come from the caller's
/// schedule).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RlConfig {
    pub group_size: usize,
    pub temperature: f64,
    pub budget: usize,
    pub learning_rate: f64,
    pub overlong: OverlongMode,
}

/// One full training step: sample, score, normalize, update in place.
///
/// A batch in which every group is skipped is a no-op step (zero objective,
/// zero gradient), not an error: early in training all-zero reward batches
/// are routine.
pub fn rl_step(
    params: &mut PolicyParams,
    tasks: &[Task],
    cfg: &RlConfig,
    vm: &VmConfig,
    run_seed: u64,
    step: u64,
    stage: usize,
) -> Result<TrainStepMetrics, GrpoError> {
    let sampling = SamplingConfig::new(cfg.temperature, cfg.budget);
    let groups = sample_groups(
        params,
        tasks,
        cfg.group_size,
        &sampling,
        vm,
        cfg.overlong,
        run_seed,
        step,
    )?;

    let mut n_rollouts = 0usize;
    let mut n_correct = 0usize;
    let mut n_truncated = 0usize;
    let mut token_total = 0usize;
    let mut entropy_total = 0.0;
    for group in &groups {
        for (i, rollout) in group.rollouts.iter().enumerate() {
            n_rollouts += 1;
            n_correct += usize::from(group.scores[i].verdict == Verdict::Correct);
            n_truncated += usize::from(rollout.truncated);
            token_total += rollout.len();
            entropy_total += group.entropy_sums[i];
        }
    }

    let (objective, grad_norm_val, groups_skipped) =
        match grpo_terms(params, tasks, &groups, cfg.temperature) {
            Ok(terms) => {
                let norm = grad_norm(&terms.grad);
                params.apply_update(&terms.grad, cfg.learning_rate);
                (terms.objective, norm, terms.groups_skipped)
            }
            Err(GrpoError::EmptyBatch) => (0.0, 0.0, groups.len()),
            Err(e) => return Err(e),
        };

    Ok(TrainStepMetrics {
        step,
        stage,
        mean_reward: n_correct as f64 / n_rollouts.max(1) as f64,
        entropy: entropy_total / token_total.max(1) as f64,
        mean_response_len: token_total as f64 / n_rollouts.max(1) as f64,
        truncation_rate: n_truncated as f64 / n_rollouts.max(1) as f64,
        groups_total: groups.len(),
        groups_skipped,
        objective,
        grad_norm: grad_norm_val,
        temperature: cfg.temperature,
        budget: cfg.budget,
    })
}

/// How to probe policy entropy when scanning temperature candidates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyProbe {
    pub rollouts_per_task: usize,
    pub budget: usize,
    pub seed: u64,
}

/// Measures the length-weighted mean per-token sampling entropy at one
/// temperature by rolling out the policy.
pub fn measure_entropy(
    params: &PolicyParams,
    tasks: &[Task],
    temperature: f64,
    probe: &EntropyProbe,
) -> Result<f64, GrpoError> {
    let sampling = SamplingConfig::new(temperature, probe.budget);
    let n = tasks.len() * probe.rollouts_per_task;
    let sums: Vec<Result<(f64, usize), PolicyError>> = map_indexed(n, |i| {
        let prompt = i / probe.rollouts_per_task;
        let rollout_index = i % probe.rollouts_per_task;
        let stream = SeedStream::at(probe.seed, 0, prompt as u64, rollout_index as u64);
        let rollout = sample(params, &tasks[prompt], &sampling, stream)?;
        let h: f64 = entropy_trace(params, &tasks[prompt], &rollout.tokens, temperature)?
            .iter()
            .sum();
        Ok((h, rollout.len()))
    });
    let mut total = 0.0;
    let mut count = 0usize;
    for s in sums {
        let (h, len) = s?;
        total += h;
        count += len;
    }
    Ok(total / count.max(1) as f64)
}

/// Scans `candidates` in ascending order and returns the temperature whose
/// measured entropy is closest to `target`, along with the measured curve.
/// Ties keep the earliest (smallest) candidate: a later candidate replaces
/// the incumbent only on a strictly smaller distance.
pub fn tune_temperature(
    params: &PolicyParams,
    tasks: &[Task],
    candidates: &[f64],
    target: f64,
    probe: &EntropyProbe,
) -> Result<(f64, Vec<(f64, f64)>), GrpoError> {
    assert!(!candidates.is_empty(), "need at least one temperature candidate");
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite temperature candidate"));
    let mut curve = Vec::with_capacity(sorted.len());
    let mut best = (f64::INFINITY, sorted[0]);
    for &tau in &sorted {
        let h = measure_entropy(params, tasks, tau, probe)?;
        curve.push((tau, h));
        let dist = (h - target).abs();
        if dist < best.0 {
            best = (dist, tau);
        }
    }
    Ok((best.1, curve))
}
