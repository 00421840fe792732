//! Desk-scale post-training lab.
//!
//! Everything in this crate is built around one constraint: every number a
//! run produces must be exactly reproducible from its seeds, on one machine,
//! in minutes. The pieces:
//!
//! - [`policy`]: a tabular log-linear autoregressive policy over a small
//!   shared vocabulary. Contexts are (task category, prompt digest, last k
//!   tokens); unseen contexts read as zero logits.
//! - [`environment`]: synthetic verifiable tasks (modular arithmetic and
//!   stack-machine programming) plus teacher traces in two styles.
//! - [`minivm`] / [`verifier`]: a bounded stack VM and rule-based answer
//!   checking that map every response to a binary reward and a verdict.
//! - [`grpo`]: strictly on-policy group-normalized policy-gradient steps with
//!   token-level aggregation and configurable handling of over-budget
//!   responses (filter out vs. penalize).
//! - [`curriculum`]: a staged length-budget schedule with dataset filters,
//!   plateau early-stopping, and divergence aborts.
//! - [`sft`]: teacher-forced supervised warm-start with dataset scaling axes.
//! - [`curation`]: dedup, n-gram decontamination, and length balancing.
//! - [`evalkit`]: avg@n / pass@K estimators, solve-rate histograms, and a
//!   log2-standardized scaling regression.
//!
//! Parallelism is a pure throughput knob: all data-parallel loops go through
//! [`exec`], whose rayon path (feature `parallel`, on by default) is
//! bit-identical to its sequential fallback.

pub mod curation;
pub mod curriculum;
pub mod environment;
pub mod evalkit;
pub mod exec;
pub mod grpo;
pub mod minivm;
pub mod policy;
pub mod seeding;
pub mod sft;
pub mod verifier;
