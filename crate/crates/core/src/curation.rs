//! Training-corpus hygiene: exact dedup, n-gram decontamination against an
//! evaluation set, and length balancing.
//!
//! All three passes are order-stable (survivors keep their input order) and
//! fully deterministic; length balancing draws its removal choices from
//! counter seeds, so a (spec, seed) pair always produces the same corpus.

use crate::seeding::counter_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Default word n-gram size for decontamination.
pub const DECONTAMINATION_NGRAM: usize = 9;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("length balancing cannot reach the target shares: {0}")]
    Unsatisfiable(String),
    #[error("bad balance spec: {0}")]
    BadSpec(String),
}

/// One corpus entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    pub text: String,
    /// Token length of the response this item would train (used by length
    /// balancing; independent of `text` word count).
    pub response_length: usize,
}

/// Casefolds and collapses runs of whitespace to single spaces.
fn normalize(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    pub input: usize,
    pub kept: usize,
    pub removed: usize,
}

/// Removes exact duplicates under normalization; the first occurrence wins.
pub fn dedup(items: Vec<CorpusItem>) -> (Vec<CorpusItem>, DedupReport) {
    let input = items.len();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut kept = Vec::with_capacity(items.len());
    for item in items {
        if seen.insert(normalize(&item.text)) {
            kept.push(item);
        }
    }
    let report = DedupReport { input, kept: kept.len(), removed: input - kept.len() };
    (kept, report)
}

/// Word n-grams of a normalized text. Texts shorter than `n` words yield
/// nothing.
fn word_ngrams(text: &str, n: usize) -> Vec<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() < n {
        return Vec::new();
    }
    (0..=words.len() - n).map(|i| words[i..i + n].join(" ")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecontaminationReport {
    pub input: usize,
    pub kept: usize,
    pub removed: usize,
    pub ngram_size: usize,
    /// Distinct n-grams collected from the evaluation texts.
    pub eval_ngrams: usize,
}

/// Drops every item that shares at least one word n-gram with any evaluation
/// text. Items shorter than `n` words cannot match and are kept.
pub fn decontaminate(
    items: Vec<CorpusItem>,
    eval_texts: &[String],
    n: usize,
) -> (Vec<CorpusItem>, DecontaminationReport) {
    assert!(n >= 1, "n-gram size must be at least 1");
    let input = items.len();
    let mut banned: BTreeSet<String> = BTreeSet::new();
    for text in eval_texts {
        for gram in word_ngrams(&normalize(text), n) {
            banned.insert(gram);
        }
    }
    let eval_ngrams = banned.len();
    let kept: Vec<CorpusItem> = items
        .into_iter()
        .filter(|item| {
            word_ngrams(&normalize(&item.text), n)
                .iter()
                .all(|gram| !banned.contains(gram))
        })
        .collect();
    let report = DecontaminationReport {
        input,
        kept: kept.len(),
        removed: input - kept.len(),
        ngram_size: n,
        eval_ngrams,
    };
    (kept, report)
}

/// Length-balancing spec: bucket `i` covers `[edges[i], edges[i+1])`, the
/// last bucket is open-ended, and `targets[i]` is its desired share of the
/// corpus. Shares are matched to within `tolerance_points` percentage points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LengthBalanceSpec {
    pub edges: Vec<usize>,
    pub targets: Vec<f64>,
    pub tolerance_points: f64,
    pub seed: u64,
}

impl LengthBalanceSpec {
    fn validate(&self) -> Result<(), CurationError> {
        if self.edges.is_empty() || self.edges.len() != self.targets.len() {
            return Err(CurationError::BadSpec(
                "edges and targets must be non-empty and aligned".into(),
            ));
        }
        if !self.edges.windows(2).all(|w| w[0] < w[1]) {
            return Err(CurationError::BadSpec("edges must be strictly ascending".into()));
        }
        if self.targets.iter().any(|t| *t < 0.0) {
            return Err(CurationError::BadSpec("targets must be non-negative".into()));
        }
        let sum: f64 = self.targets.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CurationError::BadSpec(format!("targets must sum to 1, got {sum}")));
        }
        if self.tolerance_points <= 0.0 {
            return Err(CurationError::BadSpec("tolerance must be positive".into()));
        }
        Ok(())
    }

    fn bucket_of(&self, length: usize) -> Option<usize> {
        if length < self.edges[0] {
            return None;
        }
        for i in (0..self.edges.len()).rev() {
            if length >= self.edges[i] {
                return Some(i);
            }
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub input: usize,
    pub kept: usize,
    pub removed_per_bucket: Vec<usize>,
    pub final_shares: Vec<f64>,
    pub iterations: usize,
}

/// Balances bucket shares by repeatedly removing one seeded-random item from
/// the currently most over-represented bucket. Items below the first edge are
/// rejected as a spec error. Fails as unsatisfiable when the corpus would
/// have to be emptied to meet the targets (e.g. a bucket with positive target
/// holds no items at all).
pub fn length_balance(
    items: Vec<CorpusItem>,
    spec: &LengthBalanceSpec,
) -> Result<(Vec<CorpusItem>, BalanceReport), CurationError> {
    spec.validate()?;
    let input = items.len();
    let n_buckets = spec.edges.len();
    let mut tagged: Vec<(usize, CorpusItem)> = Vec::with_capacity(items.len());
    for item in items {
        let Some(bucket) = spec.bucket_of(item.response_length) else {
            return Err(CurationError::BadSpec(format!(
                "item {} has response length {} below the first edge {}",
                item.id, item.response_length, spec.edges[0]
            )));
        };
        tagged.push((bucket, item));
    }

    let shares = |tagged: &[(usize, CorpusItem)]| -> Vec<f64> {
        let mut counts = vec![0usize; n_buckets];
        for (b, _) in tagged {
            counts[*b] += 1;
        }
        let total = tagged.len().max(1) as f64;
        counts.iter().map(|c| *c as f64 / total).collect()
    };

    let tol = spec.tolerance_points / 100.0;
    let mut removed_per_bucket = vec![0usize; n_buckets];
    let mut iterations = 0usize;
    loop {
        let s = shares(&tagged);
        let worst = (0..n_buckets)
            .max_by(|a, b| {
                let da = s[*a] - spec.targets[*a];
                let db = s[*b] - spec.targets[*b];
                da.partial_cmp(&db).expect("shares are finite")
            })
            .expect("at least one bucket");
        if s[worst] - spec.targets[worst] <= tol {
            let report = BalanceReport {
                input,
                kept: tagged.len(),
                removed_per_bucket,
                final_shares: s,
                iterations,
            };
            return Ok((tagged.into_iter().map(|(_, item)| item).collect(), report));
        }
        if tagged.len() <= 1 {
            return Err(CurationError::Unsatisfiable(
                "corpus exhausted before shares reached their targets".into(),
            ));
        }
        let members: Vec<usize> = tagged
            .iter()
            .enumerate()
            .filter(|(_, (b, _))| *b == worst)
            .map(|(i, _)| i)
            .collect();
        // The most over-represented bucket always holds at least one item.
        let mut rng = counter_rng([spec.seed, iterations as u64, worst as u64, 0]);
        let victim = members[rng.gen_range(0..members.len())];
        tagged.remove(victim);
        removed_per_bucket[worst] += 1;
        iterations += 1;
    }
}
