//! Tabular log-linear autoregressive policy.
//!
//! The policy conditions on a context key — (task category, prompt digest,
//! last `context_order` generated tokens, BOS-padded on the left) — and maps
//! it to a logit vector over the vocabulary. Next-token probabilities are
//! `softmax(logits / temperature)`. The table is sparse: contexts never
//! touched by an update read as all-zero logits, so a fresh policy is uniform
//! everywhere. Log-probabilities, entropies, and gradients are all available
//! in closed form:
//!
//! ```text
//! d log pi(v | ctx) / d logit(w | ctx) = (1[v == w] - pi(w | ctx)) / temperature
//! ```
//!
//! Sampling consumes a counter-based [`SeedStream`], so each rollout's
//! randomness is addressed by (run_seed, step, prompt, rollout) and batch
//! generation can be parallelized without changing a single sampled token.
//! Checkpoints are canonical JSON: entries sorted by context key, written
//! atomically, and byte-stable across runs.

use crate::environment::{Task, BOS_TOKEN, EOS_TOKEN};
use crate::seeding::{fnv1a64, SeedStream};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

pub type TokenId = u16;

/// Sparse gradient / update: context key -> per-token partials.
pub type SparseGrad = BTreeMap<ContextKey, Vec<f64>>;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("vocabulary must list exactly one EOS token")]
    MissingEos,
    #[error("vocabulary contains duplicate token {0:?}")]
    DuplicateToken(String),
    #[error("context_order must be in 1..=8, got {0}")]
    BadContextOrder(usize),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("top_p must be in (0, 1], got {0}")]
    BadTopP(f64),
    #[error("max_tokens must be positive")]
    BadMaxTokens,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(String),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
}

/// Context a next-token distribution conditions on.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContextKey {
    pub category: u8,
    pub prompt_hash: u64,
    /// Exactly `context_order` most recent token ids, oldest first.
    pub recent: Vec<TokenId>,
}

impl ContextKey {
    /// Canonical string form used in checkpoints: `cat|prompt|t1,t2`.
    fn encode(&self) -> String {
        let mut s = format!("{}|{}|", self.category, self.prompt_hash);
        for (i, t) in self.recent.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{t}");
        }
        s
    }

    fn decode(s: &str) -> Result<Self, PolicyError> {
        let bad = || PolicyError::Parse(format!("bad context key {s:?}"));
        let mut parts = s.splitn(3, '|');
        let category = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let prompt_hash = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let recent_s = parts.next().ok_or_else(bad)?;
        let recent = if recent_s.is_empty() {
            Vec::new()
        } else {
            recent_s
                .split(',')
                .map(|t| t.parse().map_err(|_| bad()))
                .collect::<Result<Vec<TokenId>, _>>()?
        };
        Ok(Self { category, prompt_hash, recent })
    }
}

/// How to sample: temperature scaling, optional nucleus truncation (used for
/// evaluation only), a hard token budget, and an optional greedy switch that
/// realizes the temperature->0 limit (argmax, lowest token id on ties).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    pub max_tokens: usize,
    #[serde(default)]
    pub greedy: bool,
}

impl SamplingConfig {
    pub fn new(temperature: f64, max_tokens: usize) -> Self {
        Self { temperature, top_p: None, max_tokens, greedy: false }
    }

    fn validate(&self) -> Result<(), PolicyError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(PolicyError::BadTemperature(self.temperature));
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(PolicyError::BadTopP(p));
            }
        }
        if self.max_tokens == 0 {
            return Err(PolicyError::BadMaxTokens);
        }
        Ok(())
    }
}

/// One sampled response.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Rollout {
    pub task_id: String,
    /// Generated tokens; ends with EOS iff not truncated.
    pub tokens: Vec<TokenId>,
    /// Log-probability of each generated token under the sampling
    /// distribution actually used (same temperature, same truncation).
    pub logprobs: Vec<f64>,
    pub truncated: bool,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// The policy table plus its vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub version: u32,
    pub vocab: Vec<String>,
    pub context_order: usize,
    pub table: BTreeMap<ContextKey, Vec<f64>>,
    eos_id: TokenId,
    bos_id: Option<TokenId>,
}

impl PolicyParams {
    /// Builds an all-zero (uniform) policy over `vocab`.
    pub fn new(vocab: Vec<String>, context_order: usize) -> Result<Self, PolicyError> {
        if !(1..=8).contains(&context_order) {
            return Err(PolicyError::BadContextOrder(context_order));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &vocab {
            if !seen.insert(t.clone()) {
                return Err(PolicyError::DuplicateToken(t.clone()));
            }
        }
        let eos_id = vocab
            .iter()
            .position(|t| t == EOS_TOKEN)
            .map(|i| i as TokenId)
            .ok_or(PolicyError::MissingEos)?;
        let bos_id = vocab.iter().position(|t| t == BOS_TOKEN).map(|i| i as TokenId);
        Ok(Self { version: CHECKPOINT_VERSION, vocab, context_order, table: BTreeMap::new(), eos_id, bos_id })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn token_id(&self, token: &str) -> Result<TokenId, PolicyError> {
        self.vocab
            .iter()
            .position(|t| t == token)
            .map(|i| i as TokenId)
            .ok_or_else(|| PolicyError::UnknownToken(token.to_string()))
    }

    pub fn token_ids(&self, tokens: &[String]) -> Result<Vec<TokenId>, PolicyError> {
        tokens.iter().map(|t| self.token_id(t)).collect()
    }

    pub fn decode_tokens(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|i| self.vocab[usize::from(*i)].clone()).collect()
    }

    /// Stable digest of a prompt; part of every context key, so distinct
    /// prompts never share table rows.
    pub fn prompt_hash(&self, category: u8, prompt_tokens: &[String]) -> Result<u64, PolicyError> {
        let ids = self.token_ids(prompt_tokens)?;
        let mut bytes = vec![category];
        for id in ids {
            bytes.extend_from_slice(&id.to_le_bytes());
        }
        Ok(fnv1a64(&bytes))
    }

    /// The context key in force after `generated` tokens of the response.
    pub fn context_at(
        &self,
        category: u8,
        prompt_hash: u64,
        generated: &[TokenId],
    ) -> ContextKey {
        let k = self.context_order;
        let mut recent = Vec::with_capacity(k);
        let take = generated.len().min(k);
        let bos = self.bos_id.unwrap_or(self.eos_id);
        for _ in 0..k - take {
            recent.push(bos);
        }
        recent.extend_from_slice(&generated[generated.len() - take..]);
        ContextKey { category, prompt_hash, recent }
    }

    /// Logits for a context; unseen contexts are all zeros.
    pub fn logits(&self, key: &ContextKey) -> Vec<f64> {
        self.table.get(key).cloned().unwrap_or_else(|| vec![0.0; self.vocab.len()])
    }

    /// Adds `scale * grad` into the table, materializing rows on first touch.
    pub fn apply_update(&mut self, grad: &SparseGrad, scale: f64) {
        for (key, g) in grad {
            let row = self.table.entry(key.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (r, d) in row.iter_mut().zip(g) {
                *r += scale * d;
            }
        }
    }

    /// True if any parameter is NaN or infinite (divergence sentinel).
    pub fn has_nonfinite(&self) -> bool {
        self.table.values().any(|row| row.iter().any(|v| !v.is_finite()))
    }

    pub fn param_count(&self) -> usize {
        self.table.len() * self.vocab.len()
    }
}

/// Stable log-softmax of `logits / temperature`.
fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logits.iter().map(|l| (l - max) / temperature).collect();
    let lse = scaled.iter().map(|s| s.exp()).sum::<f64>().ln();
    scaled.iter().map(|s| s - lse).collect()
}

/// Shannon entropy (nats) of `softmax(logits / temperature)`.
fn entropy_of(logits: &[f64], temperature: f64) -> f64 {
    let lp = log_softmax(logits, temperature);
    -lp.iter().map(|l| if *l > f64::NEG_INFINITY { l.exp() * l } else { 0.0 }).sum::<f64>()
}

/// Handle binding a task to the policy's context space.
#[derive(Clone, Copy, Debug)]
pub struct PromptBinding {
    pub category: u8,
    pub prompt_hash: u64,
}

impl PromptBinding {
    pub fn of(params: &PolicyParams, task: &Task) -> Result<Self, PolicyError> {
        Ok(Self {
            category: task.category.id(),
            prompt_hash: params.prompt_hash(task.category.id(), &task.prompt_tokens)?,
        })
    }
}

/// Samples one rollout for `task`.
///
/// The recorded logprobs are taken from exactly the distribution sampled
/// (same temperature, same nucleus truncation), so re-scoring an untruncated
/// temperature-only rollout with [`logprob_trace`] reproduces them bit for
/// bit. Generation stops at EOS or at `max_tokens` (truncated).
pub fn sample(
    params: &PolicyParams,
    task: &Task,
    cfg: &SamplingConfig,
    stream: SeedStream,
) -> Result<Rollout, PolicyError> {
    cfg.validate()?;
    let binding = PromptBinding::of(params, task)?;
    let mut rng = stream.rng();
    let mut tokens: Vec<TokenId> = Vec::new();
    let mut logprobs: Vec<f64> = Vec::new();
    for _ in 0..cfg.max_tokens {
        let key = params.context_at(binding.category, binding.prompt_hash, &tokens);
        let logits = params.logits(&key);
        let lp = log_softmax(&logits, cfg.temperature);
        let tok = if cfg.greedy {
            argmax_lowest(&logits)
        } else if let Some(p) = cfg.top_p {
            sample_nucleus(&lp, p, rng.gen::<f64>())
        } else {
            sample_categorical(&lp, rng.gen::<f64>())
        };
        let logprob = if let Some(p) = cfg.top_p {
            nucleus_logprob(&lp, p, tok)
        } else {
            lp[usize::from(tok)]
        };
        tokens.push(tok);
        logprobs.push(logprob);
        if tok == params.eos_id {
            return Ok(Rollout { task_id: task.id.clone(), tokens, logprobs, truncated: false });
        }
    }
    Ok(Rollout { task_id: task.id.clone(), tokens, logprobs, truncated: true })
}

fn argmax_lowest(logits: &[f64]) -> TokenId {
    let mut best = 0usize;
    for (i, l) in logits.iter().enumerate().skip(1) {
        if *l > logits[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Inverse-CDF draw over `exp(logprobs)` in vocabulary order.
fn sample_categorical(logprobs: &[f64], u: f64) -> TokenId {
    let mut acc = 0.0;
    for (i, lp) in logprobs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i as TokenId;
        }
    }
    (logprobs.len() - 1) as TokenId
}

/// Nucleus members: the smallest probability-sorted prefix reaching `top_p`.
/// Sorting ties break toward lower token id, so membership is deterministic.
fn nucleus_members(logprobs: &[f64], top_p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logprobs.len()).collect();
    order.sort_by(|&a, &b| logprobs[b].partial_cmp(&logprobs[a]).unwrap().then(a.cmp(&b)));
    let mut members = Vec::new();
    let mut mass = 0.0;
    for i in order {
        members.push(i);
        mass += logprobs[i].exp();
        if mass >= top_p {
            break;
        }
    }
    members
}

fn sample_nucleus(logprobs: &[f64], top_p: f64, u: f64) -> TokenId {
    let members = nucleus_members(logprobs, top_p);
    let mass: f64 = members.iter().map(|&i| logprobs[i].exp()).sum();
    let mut acc = 0.0;
    // Scan members in vocabulary order for a stable inverse CDF.
    let mut sorted = members.clone();
    sorted.sort_unstable();
    for i in &sorted {
        acc += logprobs[*i].exp() / mass;
        if u < acc {
            return *i as TokenId;
        }
    }
    *sorted.last().unwrap() as TokenId
}

fn nucleus_logprob(logprobs: &[f64], top_p: f64, tok: TokenId) -> f64 {
    let members = nucleus_members(logprobs, top_p);
    let mass: f64 = members.iter().map(|&i| logprobs[i].exp()).sum();
    if members.contains(&usize::from(tok)) {
        logprobs[usize::from(tok)] - mass.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Teacher-forced per-token log-probabilities of `tokens` under temperature
/// scaling (no nucleus truncation).
pub fn logprob_trace(
    params: &PolicyParams,
    task: &Task,
    tokens: &[TokenId],
    temperature: f64,
) -> Result<Vec<f64>, PolicyError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(PolicyError::BadTemperature(temperature));
    }
    let binding = PromptBinding::of(params, task)?;
    let mut out = Vec::with_capacity(tokens.len());
    for t in 0..tokens.len() {
        let key = params.context_at(binding.category, binding.prompt_hash, &tokens[..t]);
        let lp = log_softmax(&params.logits(&key), temperature);
        out.push(lp[usize::from(tokens[t])]);
    }
    Ok(out)
}

/// Per-position full-distribution entropies along a response.
pub fn entropy_trace(
    params: &PolicyParams,
    task: &Task,
    tokens: &[TokenId],
    temperature: f64,
) -> Result<Vec<f64>, PolicyError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(PolicyError::BadTemperature(temperature));
    }
    let binding = PromptBinding::of(params, task)?;
    let mut out = Vec::with_capacity(tokens.len());
    for t in 0..tokens.len() {
        let key = params.context_at(binding.category, binding.prompt_hash, &tokens[..t]);
        out.push(entropy_of(&params.logits(&key), temperature));
    }
    Ok(out)
}

/// Mean per-position entropy of a response (temperature-adjusted).
pub fn entropy_tau(
    params: &PolicyParams,
    task: &Task,
    tokens: &[TokenId],
    temperature: f64,
) -> Result<f64, PolicyError> {
    let tr = entropy_trace(params, task, tokens, temperature)?;
    if tr.is_empty() {
        return Ok(0.0);
    }
    Ok(tr.iter().sum::<f64>() / tr.len() as f64)
}

/// Analytic gradient of `sum_t log pi(tokens[t] | ctx_t)` with respect to the
/// logits, at `temperature`. Only touched contexts appear in the result;
/// every returned row sums to zero.
pub fn grad_logprob(
    params: &PolicyParams,
    task: &Task,
    tokens: &[TokenId],
    temperature: f64,
) -> Result<SparseGrad, PolicyError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(PolicyError::BadTemperature(temperature));
    }
    let binding = PromptBinding::of(params, task)?;
    let mut grad: SparseGrad = BTreeMap::new();
    for t in 0..tokens.len() {
        let key = params.context_at(binding.category, binding.prompt_hash, &tokens[..t]);
        let lp = log_softmax(&params.logits(&key), temperature);
        let row = grad.entry(key).or_insert_with(|| vec![0.0; params.vocab.len()]);
        for (w, l) in lp.iter().enumerate() {
            row[w] -= l.exp() / temperature;
        }
        row[usize::from(tokens[t])] += 1.0 / temperature;
    }
    Ok(grad)
}

/// Scales a gradient in place.
pub fn scale_grad(grad: &mut SparseGrad, scale: f64) {
    for row in grad.values_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
}

/// Accumulates `src * scale` into `dst`.
pub fn add_grad(dst: &mut SparseGrad, src: &SparseGrad, scale: f64) {
    for (key, g) in src {
        let row = dst.entry(key.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for (r, d) in row.iter_mut().zip(g) {
            *r += scale * d;
        }
    }
}

/// L2 norm over all entries of a sparse gradient.
pub fn grad_norm(grad: &SparseGrad) -> f64 {
    grad.values().flat_map(|row| row.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    vocab: Vec<String>,
    context_order: usize,
    entries: Vec<(String, Vec<f64>)>,
}

/// Serializes the policy as canonical JSON (entries sorted by key).
pub fn checkpoint_to_string(params: &PolicyParams) -> String {
    let file = CheckpointFile {
        version: params.version,
        vocab: params.vocab.clone(),
        context_order: params.context_order,
        entries: params.table.iter().map(|(k, v)| (k.encode(), v.clone())).collect(),
    };
    serde_json::to_string(&file).expect("checkpoint serialization is infallible")
}

/// Writes a checkpoint atomically (temp file + rename).
pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<(), PolicyError> {
    let body = checkpoint_to_string(params);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, body.as_bytes())?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn checkpoint_from_str(body: &str) -> Result<PolicyParams, PolicyError> {
    let file: CheckpointFile =
        serde_json::from_str(body).map_err(|e| PolicyError::Parse(e.to_string()))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(PolicyError::Version { found: file.version, expected: CHECKPOINT_VERSION });
    }
    let mut params = PolicyParams::new(file.vocab, file.context_order)?;
    let width = params.vocab.len();
    for (key, row) in file.entries {
        if row.len() != width {
            return Err(PolicyError::Parse(format!(
                "entry {key:?} has {} logits, vocab has {width}",
                row.len()
            )));
        }
        params.table.insert(ContextKey::decode(&key)?, row);
    }
    Ok(params)
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams, PolicyError> {
    checkpoint_from_str(&std::fs::read_to_string(path)?)
}
