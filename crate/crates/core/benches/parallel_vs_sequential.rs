//! Compares the rayon-backed executor against its sequential twin on the
//! workload that dominates training time: sampling a batch of rollouts.
//!
//! Run with `cargo bench -p deskrl-core`. Both paths produce bit-identical
//! outputs (seeding is per-(prompt, rollout) counters, not shared state), so
//! the only difference measured here is wall-clock throughput.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use deskrl_core::environment::{generate_tasks, standard_vocab, GeneratorSpec, Task};
use deskrl_core::exec::{map_indexed, map_indexed_seq};
use deskrl_core::policy::{sample, PolicyParams, Rollout, SamplingConfig};
use deskrl_core::seeding::SeedStream;

fn rollout_batch(
    params: &PolicyParams,
    tasks: &[Task],
    cfg: &SamplingConfig,
    parallel: bool,
    rollouts_per_prompt: usize,
) -> Vec<Rollout> {
    let n = tasks.len() * rollouts_per_prompt;
    let work = |i: usize| {
        let prompt_index = i / rollouts_per_prompt;
        let rollout_index = i % rollouts_per_prompt;
        let stream = SeedStream::at(17, 0, prompt_index as u64, rollout_index as u64);
        sample(params, &tasks[prompt_index], cfg, stream).expect("sampling failed")
    };
    if parallel {
        map_indexed(n, work)
    } else {
        map_indexed_seq(n, work)
    }
}

fn bench_rollouts(c: &mut Criterion) {
    let spec = GeneratorSpec { math_fraction: 0.5, ..GeneratorSpec::math(7, 48) };
    let tasks = generate_tasks(&spec).expect("task generation failed");
    let params = PolicyParams::new(standard_vocab(), 2).expect("vocab");
    let mut cfg = SamplingConfig::new(1.0, 128);
    cfg.top_p = Some(0.95);

    let mut group = c.benchmark_group("rollout_batch");
    for &rollouts in &[4usize, 16] {
        group.bench_with_input(
            BenchmarkId::new("parallel", rollouts),
            &rollouts,
            |b, &r| b.iter(|| rollout_batch(&params, &tasks, &cfg, true, r)),
        );
        group.bench_with_input(
            BenchmarkId::new("sequential", rollouts),
            &rollouts,
            |b, &r| b.iter(|| rollout_batch(&params, &tasks, &cfg, false, r)),
        );
    }
    group.finish();
}

criterion_group!(benches, bench_rollouts);
criterion_main!(benches);
