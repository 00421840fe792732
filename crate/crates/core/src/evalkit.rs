//! Outcome statistics for N-samples-per-problem evaluations.
//!
//! Everything operates on a rectangular boolean outcome matrix — P problems
//! by N samples per problem — however it was produced (local policy rollouts
//! or files from any external system). On top of it sit the estimators:
//! subsampled mean accuracy with spread (avg@n), the repeated-subsample
//! any-success estimator and its closed-form expectation (pass@K),
//! per-problem solve-rate histograms, and a least-squares fit of accuracy
//! against two dataset axes in standardized log2 coordinates.
//!
//! Every estimator is deterministic given its seed: repetitions draw from
//! per-repetition counter streams, so parallel and sequential runs agree
//! bit for bit and results never depend on scheduling order.

use crate::environment::Task;
use crate::exec::map_indexed;
use crate::minivm::VmConfig;
use crate::policy::{sample, PolicyError, PolicyParams, SamplingConfig};
use crate::seeding::{counter_rng, SeedStream};
use crate::verifier::{verify_rollout, Verdict};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

/// Everything that can go wrong in this module.
#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("n = {n} is out of range: need 1 <= n <= {samples} samples per problem")]
    BadN { n: usize, samples: usize },
    #[error("bad arguments: {0}")]
    BadArgs(String),
    #[error("bad bucket edges: {0}")]
    BadEdges(String),
    #[error("degenerate regression inputs: {0}")]
    Degenerate(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("ragged outcome matrix: {0}")]
    RaggedMatrix(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Boolean outcomes for P problems with exactly N sampled attempts each.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeMatrix {
    /// Problem identifiers, one per row.
    pub problems: Vec<String>,
    /// `outcomes[p][s]` is whether sample `s` of problem `p` passed.
    pub outcomes: Vec<Vec<bool>>,
    /// Free-form note about where the outcomes came from.
    pub provenance: String,
}

impl OutcomeMatrix {
    /// Builds a matrix, enforcing rectangularity, N >= 1, P >= 1, and unique
    /// problem ids.
    pub fn new(
        problems: Vec<String>,
        outcomes: Vec<Vec<bool>>,
        provenance: impl Into<String>,
    ) -> Result<Self, EvalError> {
        if problems.len() != outcomes.len() {
            return Err(EvalError::BadArgs(format!(
                "{} problem ids but {} outcome rows",
                problems.len(),
                outcomes.len()
            )));
        }
        if problems.is_empty() {
            return Err(EvalError::BadArgs("matrix needs at least one problem".into()));
        }
        let n = outcomes[0].len();
        if n == 0 {
            return Err(EvalError::BadArgs("matrix needs at least one sample per problem".into()));
        }
        for (id, row) in problems.iter().zip(&outcomes) {
            if row.len() != n {
                return Err(EvalError::RaggedMatrix(format!(
                    "problem {id} has {} samples, expected {n}",
                    row.len()
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &problems {
            if !seen.insert(id.as_str()) {
                return Err(EvalError::BadArgs(format!("duplicate problem id {id}")));
            }
        }
        Ok(Self { problems, outcomes, provenance: provenance.into() })
    }

    /// Number of problems P.
    pub fn problem_count(&self) -> usize {
        self.problems.len()
    }

    /// Samples per problem N.
    pub fn samples_per_problem(&self) -> usize {
        self.outcomes[0].len()
    }

    /// Full-matrix mean accuracy.
    pub fn accuracy(&self) -> f64 {
        let total: usize = self.outcomes.iter().map(|r| r.iter().filter(|b| **b).count()).sum();
        total as f64 / (self.problem_count() * self.samples_per_problem()) as f64
    }

    /// Per-problem pass counts c_i.
    pub fn pass_counts(&self) -> Vec<usize> {
        self.outcomes.iter().map(|r| r.iter().filter(|b| **b).count()).collect()
    }

    /// Per-problem solve rates c_i / N.
    pub fn solve_rates(&self) -> Vec<f64> {
        let n = self.samples_per_problem() as f64;
        self.pass_counts().into_iter().map(|c| c as f64 / n).collect()
    }
}

/// Subsampled mean accuracy: per repetition, one set of `n` columns is drawn
/// without replacement and shared by every problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvgAtN {
    pub n: usize,
    pub repetitions: usize,
    pub seed: u64,
    /// Mean of the per-repetition subsample accuracies.
    pub mean: f64,
    /// Population standard deviation across repetitions.
    pub std: f64,
    /// True when n == N: the single exhaustive draw replaces sampling.
    pub exhaustive: bool,
}

/// Draws `count` distinct indices from `0..total` (partial Fisher-Yates).
fn draw_columns(total: usize, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..total).collect();
    for i in 0..count {
        let j = rng.gen_range(i..total);
        idx.swap(i, j);
    }
    idx.truncate(count);
    idx
}

fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

/// Mean accuracy over `n`-column subsamples, with its spread across
/// `repetitions` independent draws. `n == N` short-circuits to the exact
/// full-matrix mean with zero spread.
pub fn avg_at_n(
    matrix: &OutcomeMatrix,
    n: usize,
    repetitions: usize,
    seed: u64,
) -> Result<AvgAtN, EvalError> {
    let samples = matrix.samples_per_problem();
    if n == 0 || n > samples {
        return Err(EvalError::BadN { n, samples });
    }
    if repetitions == 0 {
        return Err(EvalError::BadArgs("repetitions must be at least 1".into()));
    }
    if n == samples {
        return Ok(AvgAtN {
            n,
            repetitions,
            seed,
            mean: matrix.accuracy(),
            std: 0.0,
            exhaustive: true,
        });
    }
    let per_rep: Vec<f64> = map_indexed(repetitions, |rep| {
        let mut rng = counter_rng([seed, rep as u64, 0, 1]);
        let cols = draw_columns(samples, n, &mut rng);
        let mut hits = 0usize;
        for row in &matrix.outcomes {
            for &c in &cols {
                hits += usize::from(row[c]);
            }
        }
        hits as f64 / (matrix.problem_count() * n) as f64
    });
    let (mean, std) = mean_and_population_std(&per_rep);
    Ok(AvgAtN { n, repetitions, seed, mean, std, exhaustive: false })
}

/// Probability that at least one of K samples drawn without replacement from
/// N attempts (of which c passed) is a pass: 1 - C(N-c, K) / C(N, K),
/// computed as a running product so nothing overflows.
pub fn pass_at_k_exact(c: usize, n: usize, k: usize) -> Result<f64, EvalError> {
    if c > n || k == 0 || k > n {
        return Err(EvalError::BadArgs(format!(
            "need 0 <= c <= N and 1 <= K <= N, got c={c} N={n} K={k}"
        )));
    }
    let mut all_fail = 1.0f64;
    for i in 0..k {
        // (N - c - i) / (N - i): chance the (i+1)-th draw also misses.
        let misses_left = (n - c).saturating_sub(i) as f64;
        all_fail *= misses_left / (n - i) as f64;
    }
    Ok(1.0 - all_fail)
}

/// Repeated-subsample any-success estimate and its exact expectation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassAtKEstimate {
    pub k: usize,
    pub repetitions: usize,
    pub seed: u64,
    /// Mean of the per-repetition fractions.
    pub estimate: f64,
    pub per_repetition: Vec<f64>,
    /// Mean over problems of the closed-form expectation — the value the
    /// estimate converges to as repetitions grow.
    pub closed_form: f64,
}

/// Per repetition and per problem, draws K of the N samples without
/// replacement and scores the problem as passed if any drawn sample passed;
/// the fraction of passing problems is averaged across repetitions.
pub fn pass_at_k(
    matrix: &OutcomeMatrix,
    k: usize,
    repetitions: usize,
    seed: u64,
) -> Result<PassAtKEstimate, EvalError> {
    let samples = matrix.samples_per_problem();
    if k == 0 || k > samples {
        return Err(EvalError::BadArgs(format!(
            "need 1 <= K <= {samples} samples per problem, got K={k}"
        )));
    }
    if repetitions == 0 {
        return Err(EvalError::BadArgs("repetitions must be at least 1".into()));
    }
    let counts = matrix.pass_counts();
    let mut closed_form = 0.0;
    for &c in &counts {
        closed_form += pass_at_k_exact(c, samples, k)?;
    }
    closed_form /= counts.len() as f64;

    let problems = matrix.problem_count();
    let per_repetition: Vec<f64> = map_indexed(repetitions, |rep| {
        let mut passed = 0usize;
        for (p, row) in matrix.outcomes.iter().enumerate() {
            let mut rng = counter_rng([seed, rep as u64, p as u64, 2]);
            let cols = draw_columns(samples, k, &mut rng);
            passed += usize::from(cols.iter().any(|&c| row[c]));
        }
        passed as f64 / problems as f64
    });
    let estimate = per_repetition.iter().sum::<f64>() / repetitions as f64;
    Ok(PassAtKEstimate { k, repetitions, seed, estimate, per_repetition, closed_form })
}

/// Per-problem solve rates bucketed over `[edge_i, edge_{i+1})` intervals,
/// with the final interval closed on the right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveRateReport {
    /// One rate per problem, row order.
    pub rates: Vec<f64>,
    pub bucket_edges: Vec<f64>,
    pub bucket_counts: Vec<usize>,
    /// Problems no sample ever solved — the hard tail.
    pub zero_rate_problems: usize,
}

/// Buckets per-problem solve rates. Edges must be strictly increasing and
/// cover [0, 1]; every bucket is half-open except the last, which includes
/// its right edge so a perfect rate of 1.0 lands in the top bucket.
pub fn solve_rate_histogram(
    matrix: &OutcomeMatrix,
    bucket_edges: &[f64],
) -> Result<SolveRateReport, EvalError> {
    if bucket_edges.len() < 2 {
        return Err(EvalError::BadEdges("need at least two edges".into()));
    }
    if bucket_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::BadEdges("edges must be strictly increasing".into()));
    }
    let (first, last) = (bucket_edges[0], *bucket_edges.last().unwrap());
    if first > 0.0 || last < 1.0 {
        return Err(EvalError::BadEdges(format!(
            "edges [{first}, {last}] do not cover [0, 1]"
        )));
    }
    let rates = matrix.solve_rates();
    let mut bucket_counts = vec![0usize; bucket_edges.len() - 1];
    for &r in &rates {
        let mut bucket = bucket_counts.len() - 1; // right-closed final bucket
        for i in 0..bucket_counts.len() - 1 {
            if r >= bucket_edges[i] && r < bucket_edges[i + 1] {
                bucket = i;
                break;
            }
        }
        bucket_counts[bucket] += 1;
    }
    let zero_rate_problems = rates.iter().filter(|r| **r == 0.0).count();
    Ok(SolveRateReport {
        rates,
        bucket_edges: bucket_edges.to_vec(),
        bucket_counts,
        zero_rate_problems,
    })
}

/// Mean and population std used to standardize one regressor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

/// Least-squares plane through (log2 x, log2 y) -> z in standardized
/// coordinates: z = a * x~ + b * y~ + c.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub a: f64,
    pub b: f64,
    /// Intercept in standardized coordinates; equals the mean of z.
    pub c: f64,
    pub r_squared: f64,
    pub x_log2: Standardization,
    pub y_log2: Standardization,
}

/// Fits z = a * x~ + b * y~ + c where x~ and y~ are log2-transformed and
/// standardized to zero mean and unit variance, via the 2x2 normal
/// equations. Needs at least 3 points whose (log2 x, log2 y) are not
/// collinear and whose z values are not all equal.
pub fn fit_scaling(points: &[(f64, f64, f64)]) -> Result<ScalingFit, EvalError> {
    if points.len() < 3 {
        return Err(EvalError::Degenerate(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    for &(x, y, _) in points {
        if x <= 0.0 || y <= 0.0 {
            return Err(EvalError::BadArgs(format!(
                "axes must be positive to take log2, got ({x}, {y})"
            )));
        }
    }
    let p = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|&(x, _, _)| x.log2()).collect();
    let ly: Vec<f64> = points.iter().map(|&(_, y, _)| y.log2()).collect();
    let z: Vec<f64> = points.iter().map(|&(_, _, z)| z).collect();
    let (mx, sx) = mean_and_population_std(&lx);
    let (my, sy) = mean_and_population_std(&ly);
    if sx == 0.0 || sy == 0.0 {
        return Err(EvalError::Degenerate("an axis is constant across points".into()));
    }
    let xs: Vec<f64> = lx.iter().map(|v| (v - mx) / sx).collect();
    let ys: Vec<f64> = ly.iter().map(|v| (v - my) / sy).collect();
    // Standardized columns: sum of squares is exactly P, so the Gram matrix
    // is [[P, sxy], [sxy, P]] and collinearity means |sxy| -> P.
    let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
    let det = p * p - sxy * sxy;
    if det.abs() < 1e-9 * p * p {
        return Err(EvalError::Degenerate(
            "log2 axes are collinear across points".into(),
        ));
    }
    let zbar = z.iter().sum::<f64>() / p;
    let sxz: f64 = xs.iter().zip(&z).map(|(a, b)| a * (b - zbar)).sum();
    let syz: f64 = ys.iter().zip(&z).map(|(a, b)| a * (b - zbar)).sum();
    let a = (p * sxz - sxy * syz) / det;
    let b = (p * syz - sxy * sxz) / det;
    let c = zbar;
    let mut rss = 0.0;
    let mut tss = 0.0;
    for i in 0..points.len() {
        let fitted = a * xs[i] + b * ys[i] + c;
        rss += (z[i] - fitted) * (z[i] - fitted);
        tss += (z[i] - zbar) * (z[i] - zbar);
    }
    if tss == 0.0 {
        return Err(EvalError::Degenerate("z is constant across points".into()));
    }
    Ok(ScalingFit {
        a,
        b,
        c,
        r_squared: 1.0 - rss / tss,
        x_log2: Standardization { mean: mx, std: sx },
        y_log2: Standardization { mean: my, std: sy },
    })
}

/// On-disk encodings for outcome matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutcomeFormat {
    /// `problem_id,sample_index,pass` with a header row.
    Csv,
    /// One `{"problem_id": ..., "sample_index": ..., "pass": ...}` per line.
    Jsonl,
}

impl std::str::FromStr for OutcomeFormat {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(EvalError::Parse(format!("unknown outcome format {other:?}"))),
        }
    }
}

impl fmt::Display for OutcomeFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Jsonl => "jsonl",
        })
    }
}

const CSV_HEADER: &str = "problem_id,sample_index,pass";

#[derive(Serialize, Deserialize)]
struct OutcomeRecord {
    problem_id: String,
    sample_index: usize,
    pass: bool,
}

/// Serializes a matrix cell by cell. The write lands atomically: the bytes
/// go to a sibling temp file first and are renamed into place.
pub fn export_outcomes(
    matrix: &OutcomeMatrix,
    path: impl AsRef<Path>,
    format: OutcomeFormat,
) -> Result<(), EvalError> {
    let mut out = String::new();
    match format {
        OutcomeFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for (id, row) in matrix.problems.iter().zip(&matrix.outcomes) {
                if id.contains(',') || id.contains('\n') {
                    return Err(EvalError::Parse(format!(
                        "problem id {id:?} cannot be written as csv"
                    )));
                }
                for (s, pass) in row.iter().enumerate() {
                    out.push_str(&format!("{id},{s},{pass}\n"));
                }
            }
        }
        OutcomeFormat::Jsonl => {
            for (id, row) in matrix.problems.iter().zip(&matrix.outcomes) {
                for (s, pass) in row.iter().enumerate() {
                    let record = OutcomeRecord {
                        problem_id: id.clone(),
                        sample_index: s,
                        pass: *pass,
                    };
                    out.push_str(&serde_json::to_string(&record).expect("record serializes"));
                    out.push('\n');
                }
            }
        }
    }
    let path = path.as_ref();
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a matrix back from either encoding, validating that every problem
/// carries exactly the sample indices 0..N-1 for one shared N.
pub fn ingest_outcomes(
    path: impl AsRef<Path>,
    format: OutcomeFormat,
) -> Result<OutcomeMatrix, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut records: Vec<OutcomeRecord> = Vec::new();
    match format {
        OutcomeFormat::Csv => {
            let mut lines = text.lines().map(str::trim_end).filter(|l| !l.is_empty());
            match lines.next() {
                Some(h) if h == CSV_HEADER => {}
                Some(h) => {
                    return Err(EvalError::Parse(format!(
                        "expected header {CSV_HEADER:?}, found {h:?}"
                    )))
                }
                None => return Err(EvalError::Parse("empty file".into())),
            }
            for (lineno, line) in lines.enumerate() {
                let mut rev = line.rsplitn(3, ',');
                let (pass, index, id) = match (rev.next(), rev.next(), rev.next()) {
                    (Some(p), Some(i), Some(id)) => (p.trim(), i.trim(), id),
                    _ => {
                        return Err(EvalError::Parse(format!(
                            "line {}: expected 3 comma-separated fields",
                            lineno + 2
                        )))
                    }
                };
                let pass = match pass {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    other => {
                        return Err(EvalError::Parse(format!(
                            "line {}: bad pass value {other:?}",
                            lineno + 2
                        )))
                    }
                };
                let sample_index: usize = index.parse().map_err(|_| {
                    EvalError::Parse(format!("line {}: bad sample index {index:?}", lineno + 2))
                })?;
                records.push(OutcomeRecord { problem_id: id.to_string(), sample_index, pass });
            }
        }
        OutcomeFormat::Jsonl => {
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: OutcomeRecord = serde_json::from_str(line).map_err(|e| {
                    EvalError::Parse(format!("line {}: {e}", lineno + 1))
                })?;
                records.push(record);
            }
        }
    }
    if records.is_empty() {
        return Err(EvalError::Parse("no outcome records".into()));
    }

    // Group by problem in first-seen order and demand a full 0..N-1 row each.
    let mut order: Vec<String> = Vec::new();
    let mut rows: std::collections::BTreeMap<String, Vec<Option<bool>>> =
        std::collections::BTreeMap::new();
    for r in records {
        if !rows.contains_key(&r.problem_id) {
            order.push(r.problem_id.clone());
        }
        let row = rows.entry(r.problem_id.clone()).or_default();
        if row.len() <= r.sample_index {
            row.resize(r.sample_index + 1, None);
        }
        if row[r.sample_index].is_some() {
            return Err(EvalError::RaggedMatrix(format!(
                "problem {} repeats sample index {}",
                r.problem_id, r.sample_index
            )));
        }
        row[r.sample_index] = Some(r.pass);
    }
    let n = rows[&order[0]].len();
    let mut outcomes = Vec::with_capacity(order.len());
    for id in &order {
        let row = &rows[id];
        if row.len() != n {
            return Err(EvalError::RaggedMatrix(format!(
                "problem {id} has {} sample slots, expected {n}",
                row.len()
            )));
        }
        let mut out_row = Vec::with_capacity(n);
        for (s, cell) in row.iter().enumerate() {
            match cell {
                Some(b) => out_row.push(*b),
                None => {
                    return Err(EvalError::RaggedMatrix(format!(
                        "problem {id} is missing sample index {s}"
                    )))
                }
            }
        }
        outcomes.push(out_row);
    }
    OutcomeMatrix::new(order, outcomes, format!("ingested {format} file {}", path.display()))
}

/// Samples `samples_per_task` seeded rollouts per task, verifies each, and
/// packs the pass/fail outcomes into a matrix.
pub fn collect_outcomes(
    params: &PolicyParams,
    tasks: &[Task],
    cfg: &SamplingConfig,
    samples_per_task: usize,
    vm: &VmConfig,
    seed: u64,
) -> Result<OutcomeMatrix, EvalError> {
    if tasks.is_empty() || samples_per_task == 0 {
        return Err(EvalError::BadArgs(
            "need at least one task and one sample per task".into(),
        ));
    }
    let total = tasks.len() * samples_per_task;
    let cells: Vec<Result<bool, PolicyError>> = map_indexed(total, |i| {
        let task = i / samples_per_task;
        let s = i % samples_per_task;
        let stream = SeedStream::at(seed, 0, task as u64, s as u64);
        let rollout = sample(params, &tasks[task], cfg, stream)?;
        Ok(verify_rollout(params, &tasks[task], &rollout, vm).verdict == Verdict::Correct)
    });
    let mut outcomes = Vec::with_capacity(tasks.len());
    let mut it = cells.into_iter();
    for _ in 0..tasks.len() {
        let mut row = Vec::with_capacity(samples_per_task);
        for _ in 0..samples_per_task {
            row.push(it.next().expect("cell count matches")?);
        }
        outcomes.push(row);
    }
    let problems = tasks.iter().map(|t| t.id.clone()).collect();
    OutcomeMatrix::new(
        problems,
        outcomes,
        format!(
            "policy rollouts: {} tasks x {samples_per_task} samples, temperature {}, budget {}, seed {seed}",
            tasks.len(),
            cfg.temperature,
            cfg.max_tokens
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{generate_tasks, standard_vocab, GeneratorSpec};

    fn matrix_from_rows(rows: &[&[bool]]) -> OutcomeMatrix {
        OutcomeMatrix::new(
            (0..rows.len()).map(|i| format!("p{i}")).collect(),
            rows.iter().map(|r| r.to_vec()).collect(),
            "test",
        )
        .unwrap()
    }

    /// Matrix whose row `i` has exactly `counts[i]` passes out of `n`.
    fn matrix_with_counts(counts: &[usize], n: usize) -> OutcomeMatrix {
        let outcomes = counts
            .iter()
            .map(|&c| (0..n).map(|s| s < c).collect::<Vec<bool>>())
            .collect();
        OutcomeMatrix::new(
            (0..counts.len()).map(|i| format!("p{i}")).collect(),
            outcomes,
            "test",
        )
        .unwrap()
    }

    fn bernoulli_matrix(problems: usize, samples: usize, seed: u64) -> OutcomeMatrix {
        let mut rng = counter_rng([seed, 0, 0, 77]);
        let outcomes = (0..problems)
            .map(|_| (0..samples).map(|_| rng.gen_bool(0.5)).collect::<Vec<bool>>())
            .collect();
        OutcomeMatrix::new(
            (0..problems).map(|i| format!("p{i}")).collect(),
            outcomes,
            "bernoulli",
        )
        .unwrap()
    }

    #[test]
    fn matrix_validation_rejects_bad_shapes() {
        assert!(matches!(
            OutcomeMatrix::new(vec!["a".into()], vec![], "t"),
            Err(EvalError::BadArgs(_))
        ));
        assert!(matches!(
            OutcomeMatrix::new(
                vec!["a".into(), "b".into()],
                vec![vec![true], vec![true, false]],
                "t"
            ),
            Err(EvalError::RaggedMatrix(_))
        ));
        assert!(matches!(
            OutcomeMatrix::new(
                vec!["a".into(), "a".into()],
                vec![vec![true], vec![false]],
                "t"
            ),
            Err(EvalError::BadArgs(_))
        ));
        assert!(matches!(
            OutcomeMatrix::new(vec!["a".into()], vec![vec![]], "t"),
            Err(EvalError::BadArgs(_))
        ));
    }

    #[test]
    fn avg_at_n_on_all_true_matrix_is_one_with_zero_spread() {
        let m = matrix_from_rows(&[&[true; 6], &[true; 6], &[true; 6]]);
        for n in 1..=6 {
            let a = avg_at_n(&m, n, 50, 3).unwrap();
            assert_eq!(a.mean, 1.0);
            assert_eq!(a.std, 0.0);
        }
    }

    #[test]
    fn avg_at_n_exhaustive_case_is_exact() {
        // 7 passes over 12 cells, counted by hand.
        let m = matrix_from_rows(&[
            &[true, true, false, true],
            &[false, false, true, true],
            &[true, false, true, false],
        ]);
        let a = avg_at_n(&m, 4, 100, 9).unwrap();
        assert!(a.exhaustive);
        assert_eq!(a.mean, 7.0 / 12.0);
        assert_eq!(a.std, 0.0);
        assert!(matches!(avg_at_n(&m, 5, 100, 9), Err(EvalError::BadN { n: 5, samples: 4 })));
        assert!(matches!(avg_at_n(&m, 0, 100, 9), Err(EvalError::BadN { .. })));
    }

    #[test]
    fn avg_at_n_spread_shrinks_like_inverse_sqrt_n() {
        // Against a coin-flip matrix with N=512, subsample means drawn
        // without replacement have std proportional to
        // sqrt((1 - n/N) / n); for n=16 vs n=64 the predicted ratio is
        // sqrt((4 * (1 - 16/512)) / (1 - 64/512)) = 2.104.
        let mut sum16 = 0.0;
        let mut sum64 = 0.0;
        for s in 0..50u64 {
            let m = bernoulli_matrix(30, 512, s);
            sum16 += avg_at_n(&m, 16, 100, s + 1000).unwrap().std;
            sum64 += avg_at_n(&m, 64, 100, s + 2000).unwrap().std;
        }
        let ratio = sum16 / sum64;
        assert!(
            (1.7..=2.3).contains(&ratio),
            "std ratio {ratio} strayed from the 1/sqrt(n) law (predicted 2.104)"
        );
    }

    #[test]
    fn avg_at_n_is_deterministic_per_seed() {
        let m = bernoulli_matrix(10, 32, 4);
        let a = avg_at_n(&m, 8, 40, 11).unwrap();
        let b = avg_at_n(&m, 8, 40, 11).unwrap();
        assert_eq!(a, b);
        let c = avg_at_n(&m, 8, 40, 12).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn closed_form_matches_hand_computed_cases() {
        // c=2, N=4, K=2: failure needs both draws from the 2 misses,
        // (2/4)(1/3) = 1/6, so the pass chance is 5/6.
        assert!((pass_at_k_exact(2, 4, 2).unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(pass_at_k_exact(0, 16, 4).unwrap(), 0.0);
        assert_eq!(pass_at_k_exact(16, 16, 4).unwrap(), 1.0);
        // K=1 is the plain solve rate.
        assert!((pass_at_k_exact(64, 128, 1).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(pass_at_k_exact(5, 4, 1), Err(EvalError::BadArgs(_))));
        assert!(matches!(pass_at_k_exact(1, 4, 0), Err(EvalError::BadArgs(_))));
        assert!(matches!(pass_at_k_exact(1, 4, 5), Err(EvalError::BadArgs(_))));
    }

    #[test]
    fn pass_at_k_with_k_equal_n_is_exact() {
        let m = matrix_from_rows(&[
            &[false, false, true, false],
            &[false, false, false, false],
            &[true, true, true, true],
        ]);
        let e = pass_at_k(&m, 4, 10, 5).unwrap();
        // Two of three rows contain a success; every exhaustive draw sees it.
        assert!(e.per_repetition.iter().all(|v| *v == 2.0 / 3.0));
        assert_eq!(e.closed_form, 2.0 / 3.0);
        assert!((e.estimate - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pass_at_k_estimate_converges_to_the_closed_form() {
        // Known pass counts 0..9 over N=16.
        let counts: Vec<usize> = (0..10).collect();
        let m = matrix_with_counts(&counts, 16);
        let closed = pass_at_k(&m, 8, 1, 0).unwrap().closed_form;
        let mut dev100 = 0.0;
        let mut dev1000 = 0.0;
        for s in 0..50u64 {
            dev100 += (pass_at_k(&m, 8, 100, s).unwrap().estimate - closed).abs();
            dev1000 += (pass_at_k(&m, 8, 1000, s).unwrap().estimate - closed).abs();
        }
        let mad100 = dev100 / 50.0;
        let mad1000 = dev1000 / 50.0;
        assert!(mad100 < 0.02, "mean abs deviation at 100 reps: {mad100}");
        assert!(mad1000 < 0.007, "mean abs deviation at 1000 reps: {mad1000}");
        assert!(mad1000 < mad100, "more repetitions should track the oracle tighter");
    }

    #[test]
    fn pass_at_k_is_non_decreasing_in_k() {
        let m = bernoulli_matrix(6, 8, 21);
        let mut last_closed = 0.0;
        for k in 1..=8 {
            let e = pass_at_k(&m, k, 200, 31).unwrap();
            assert!(
                e.closed_form >= last_closed - 1e-12,
                "closed form dipped at K={k}"
            );
            assert!(
                (e.estimate - e.closed_form).abs() < 0.05,
                "estimate {} far from closed form {} at K={k}",
                e.estimate,
                e.closed_form
            );
            last_closed = e.closed_form;
        }
    }

    #[test]
    fn solve_rate_histogram_buckets_by_hand() {
        // Rates 0, 0.5, 1 over edges [0, .2, .8, 1]: one per bucket, and the
        // perfect rate lands in the final closed bucket.
        let m = matrix_with_counts(&[0, 2, 4], 4);
        let report = solve_rate_histogram(&m, &[0.0, 0.2, 0.8, 1.0]).unwrap();
        assert_eq!(report.rates, vec![0.0, 0.5, 1.0]);
        assert_eq!(report.bucket_counts, vec![1, 1, 1]);
        assert_eq!(report.zero_rate_problems, 1);

        assert!(matches!(
            solve_rate_histogram(&m, &[0.0, 0.5]),
            Err(EvalError::BadEdges(_))
        ));
        assert!(matches!(
            solve_rate_histogram(&m, &[0.2, 0.8, 1.0]),
            Err(EvalError::BadEdges(_))
        ));
        assert!(matches!(
            solve_rate_histogram(&m, &[0.0, 0.5, 0.5, 1.0]),
            Err(EvalError::BadEdges(_))
        ));
    }

    /// Standardizes `values` to zero mean, unit population variance.
    fn standardize(values: &[f64]) -> Vec<f64> {
        let (m, s) = mean_and_population_std(values);
        values.iter().map(|v| (v - m) / s).collect()
    }

    #[test]
    fn fit_scaling_recovers_a_noiseless_plane() {
        let mut points = Vec::new();
        let xs: Vec<f64> = [50.0, 100.0, 200.0, 400.0].into();
        let ys: Vec<f64> = [1.0, 2.0, 4.0].into();
        let sx = standardize(&xs.iter().map(|x| x.log2()).collect::<Vec<_>>());
        let sy = standardize(&ys.iter().map(|y| y.log2()).collect::<Vec<_>>());
        // Full grid: per-point standardized coordinates repeat each axis
        // value equally often, so the grid's standardization matches the
        // per-axis one used to construct z.
        for (i, &x) in xs.iter().enumerate() {
            for (j, &y) in ys.iter().enumerate() {
                points.push((x, y, 4.831 * sx[i] + 2.635 * sy[j] + 0.7));
            }
        }
        let fit = fit_scaling(&points).unwrap();
        assert!((fit.a - 4.831).abs() < 1e-9, "a = {}", fit.a);
        assert!((fit.b - 2.635).abs() < 1e-9, "b = {}", fit.b);
        assert!((fit.c - 0.7).abs() < 1e-9, "c = {}", fit.c);
        assert!(fit.r_squared > 1.0 - 1e-9);
        assert!(fit.r_squared <= 1.0 + 1e-12);
    }

    #[test]
    fn fit_scaling_finds_zero_slope_for_an_ignored_axis() {
        let mut points = Vec::new();
        for x in [8.0f64, 16.0, 32.0, 64.0] {
            for y in [1.0f64, 2.0, 4.0] {
                points.push((x, y, 0.1 * x.log2() + 0.25));
            }
        }
        let fit = fit_scaling(&points).unwrap();
        assert!(fit.b.abs() < 1e-9, "b = {}", fit.b);
        assert!(fit.a > 0.0);
        assert!(fit.r_squared > 1.0 - 1e-9);
    }

    #[test]
    fn fit_scaling_rejects_degenerate_inputs() {
        // Too few points.
        assert!(matches!(
            fit_scaling(&[(2.0, 1.0, 0.1), (4.0, 2.0, 0.2)]),
            Err(EvalError::Degenerate(_))
        ));
        // Collinear axes: y = x so log2 y = log2 x.
        let collinear: Vec<(f64, f64, f64)> =
            (1..=5).map(|i| (2f64.powi(i), 2f64.powi(i), i as f64 * 0.1)).collect();
        assert!(matches!(fit_scaling(&collinear), Err(EvalError::Degenerate(_))));
        // Constant z.
        let flat: Vec<(f64, f64, f64)> = vec![
            (2.0, 1.0, 0.5),
            (4.0, 2.0, 0.5),
            (8.0, 1.0, 0.5),
            (2.0, 2.0, 0.5),
        ];
        assert!(matches!(fit_scaling(&flat), Err(EvalError::Degenerate(_))));
        // Constant axis.
        let constant_x: Vec<(f64, f64, f64)> =
            vec![(4.0, 1.0, 0.1), (4.0, 2.0, 0.2), (4.0, 4.0, 0.3)];
        assert!(matches!(fit_scaling(&constant_x), Err(EvalError::Degenerate(_))));
        // Non-positive axis value.
        assert!(matches!(
            fit_scaling(&[(0.0, 1.0, 0.1), (2.0, 2.0, 0.2), (4.0, 4.0, 0.3)]),
            Err(EvalError::BadArgs(_))
        ));
    }

    #[test]
    fn export_ingest_round_trips_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let m = bernoulli_matrix(5, 7, 13);
        for format in [OutcomeFormat::Csv, OutcomeFormat::Jsonl] {
            let path = dir.path().join(format!("outcomes.{format}"));
            export_outcomes(&m, &path, format).unwrap();
            let back = ingest_outcomes(&path, format).unwrap();
            assert_eq!(back.problems, m.problems);
            assert_eq!(back.outcomes, m.outcomes);
        }
    }

    #[test]
    fn ingest_rejects_ragged_and_malformed_files() {
        let dir = tempfile::tempdir().unwrap();

        let missing = dir.path().join("missing.csv");
        std::fs::write(&missing, "problem_id,sample_index,pass\na,0,true\na,1,false\nb,0,true\n")
            .unwrap();
        assert!(matches!(
            ingest_outcomes(&missing, OutcomeFormat::Csv),
            Err(EvalError::RaggedMatrix(_))
        ));

        let dup = dir.path().join("dup.csv");
        std::fs::write(&dup, "problem_id,sample_index,pass\na,0,true\na,0,false\n").unwrap();
        assert!(matches!(
            ingest_outcomes(&dup, OutcomeFormat::Csv),
            Err(EvalError::RaggedMatrix(_))
        ));

        let bad_header = dir.path().join("hdr.csv");
        std::fs::write(&bad_header, "id,idx,ok\na,0,true\n").unwrap();
        assert!(matches!(
            ingest_outcomes(&bad_header, OutcomeFormat::Csv),
            Err(EvalError::Parse(_))
        ));

        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(
            ingest_outcomes(&empty, OutcomeFormat::Jsonl),
            Err(EvalError::Parse(_))
        ));

        let bad_json = dir.path().join("bad.jsonl");
        std::fs::write(&bad_json, "{\"problem_id\": \"a\"}\n").unwrap();
        assert!(matches!(
            ingest_outcomes(&bad_json, OutcomeFormat::Jsonl),
            Err(EvalError::Parse(_))
        ));
    }

    #[test]
    fn ingest_parses_a_hand_written_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hand.csv");
        std::fs::write(
            &path,
            "problem_id,sample_index,pass\nq1,0,1\nq1,1,0\nq2,1,true\nq2,0,false\nq3,0,true\nq3,1,true\n",
        )
        .unwrap();
        let m = ingest_outcomes(&path, OutcomeFormat::Csv).unwrap();
        assert_eq!(m.problems, vec!["q1", "q2", "q3"]);
        assert_eq!(
            m.outcomes,
            vec![vec![true, false], vec![false, true], vec![true, true]]
        );
    }

    #[test]
    fn collect_outcomes_is_deterministic_and_task_shaped() {
        let tasks = generate_tasks(&GeneratorSpec::math(31, 4)).unwrap();
        let params = PolicyParams::new(standard_vocab(), 2).unwrap();
        let cfg = SamplingConfig::new(0.6, 32);
        let vm = VmConfig::default();
        let a = collect_outcomes(&params, &tasks, &cfg, 3, &vm, 17).unwrap();
        let b = collect_outcomes(&params, &tasks, &cfg, 3, &vm, 17).unwrap();
        assert_eq!(a.problems, b.problems);
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.problem_count(), 4);
        assert_eq!(a.samples_per_problem(), 3);
        assert_eq!(a.problems, tasks.iter().map(|t| t.id.clone()).collect::<Vec<_>>());
    }
}
