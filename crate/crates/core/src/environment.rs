//! Synthetic verifiable tasks and teacher traces.
//!
//! Two task families share one small vocabulary so a single policy can serve
//! both:
//!
//! - `MATH`: 2-4-operand integer arithmetic over `{+, -, *}`, evaluated
//!   strictly left to right, with the final answer reduced into `[0, 99]`
//!   (euclidean mod 100). The canonical answer is wrapped in `<box> ... </box>`.
//! - `CODE`: implement an input->output function on the bounded stack VM; a
//!   task carries at least two test cases and is solved only when a submitted
//!   program passes all of them.
//!
//! Teacher traces come in two styles. `CONCISE` states the running results
//! and the boxed answer (for CODE, the reference program). `VERBOSE` walks
//! every step and then restates the final intermediate over and over before
//! boxing the answer; the restatement loop is sized per difficulty so that
//! verbose responses overflow tight generation budgets on purpose — that is
//! the behavior the length-budget curriculum is built to train away.
//! Generation is purely counter-seeded: a spec always produces the same
//! suite, item by item.

use crate::minivm::{run_minivm, Instruction, VmConfig};
use crate::seeding::counter_rng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const BOX_OPEN: &str = "<box>";
pub const BOX_CLOSE: &str = "</box>";

/// The shared 27-token vocabulary: digits, arithmetic and structure marks,
/// answer box, VM opcodes, and the BOS/EOS sentinels.
pub fn standard_vocab() -> Vec<String> {
    let mut v: Vec<String> = vec![BOS_TOKEN.into(), EOS_TOKEN.into()];
    for d in 0..=9u8 {
        v.push(d.to_string());
    }
    for t in ["+", "-", "*", "=", ";", BOX_OPEN, BOX_CLOSE] {
        v.push(t.into());
    }
    for t in ["IN", "ADD", "SUB", "MUL", "DUP", "SWAP", "POP", "HALT"] {
        v.push(t.into());
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskCategory {
    #[serde(rename = "MATH")]
    Math,
    #[serde(rename = "CODE")]
    Code,
}

impl TaskCategory {
    /// Small integer tag used inside policy context keys.
    pub fn id(&self) -> u8 {
        match self {
            TaskCategory::Math => 0,
            TaskCategory::Code => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: Vec<i64>,
    pub expected: i64,
}

/// One verifiable task. `truth` is set for MATH; `test_cases` plus the
/// generator's `reference_program` (its ground truth) are set for CODE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub category: TaskCategory,
    pub prompt_tokens: Vec<String>,
    pub difficulty: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_cases: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_program: Option<Vec<String>>,
}

impl Task {
    /// Checks the cross-field invariants a well-formed task record satisfies;
    /// used when tasks are loaded from files rather than generated.
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(1..=5).contains(&self.difficulty) {
            return Err(EnvError::BadSpec(format!("task {}: difficulty out of range", self.id)));
        }
        match self.category {
            TaskCategory::Math => {
                if self.truth.is_none() {
                    return Err(EnvError::BadSpec(format!("MATH task {} lacks truth", self.id)));
                }
            }
            TaskCategory::Code => {
                if self.test_cases.len() < 2 {
                    return Err(EnvError::BadSpec(format!(
                        "CODE task {} needs at least 2 test cases",
                        self.id
                    )));
                }
                let Some(prog) = &self.reference_program else {
                    return Err(EnvError::BadSpec(format!(
                        "CODE task {} lacks a reference program",
                        self.id
                    )));
                };
                let Some(instrs) = crate::minivm::parse_program(prog) else {
                    return Err(EnvError::BadSpec(format!(
                        "CODE task {}: unparseable reference program",
                        self.id
                    )));
                };
                let vm = VmConfig::default();
                for case in &self.test_cases {
                    if run_minivm(&instrs, &case.input, &vm) != Ok(case.expected) {
                        return Err(EnvError::BadSpec(format!(
                            "CODE task {}: reference program fails its own test cases",
                            self.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MathOp {
    Add,
    Sub,
    Mul,
}

impl MathOp {
    pub fn token(&self) -> &'static str {
        match self {
            MathOp::Add => "+",
            MathOp::Sub => "-",
            MathOp::Mul => "*",
        }
    }

    fn apply(&self, a: i64, b: i64) -> Option<i64> {
        match self {
            MathOp::Add => a.checked_add(b),
            MathOp::Sub => a.checked_sub(b),
            MathOp::Mul => a.checked_mul(b),
        }
    }
}

/// Deterministic task-suite recipe.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub version: u32,
    pub seed: u64,
    pub count: usize,
    /// Fraction of the suite that is MATH (the rest is CODE).
    pub math_fraction: f64,
    /// Inclusive operand range for MATH expressions (non-negative).
    pub operand_range: (i64, i64),
    pub operators: Vec<MathOp>,
    /// Relative weight of difficulties 1..=5.
    pub difficulty_mix: [f64; 5],
}

impl GeneratorSpec {
    pub fn math(seed: u64, count: usize) -> Self {
        Self {
            version: 1,
            seed,
            count,
            math_fraction: 1.0,
            operand_range: (2, 9),
            operators: vec![MathOp::Add, MathOp::Sub, MathOp::Mul],
            difficulty_mix: [1.0; 5],
        }
    }

    pub fn code(seed: u64, count: usize) -> Self {
        Self { math_fraction: 0.0, ..Self::math(seed, count) }
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid generator spec: {0}")]
    BadSpec(String),
    #[error("could not satisfy spec within {retries} retries (distinct prompts exhausted?)")]
    InfeasibleSpec { retries: usize },
}

/// Digit-token spelling of an integer ("-75" -> ["-", "7", "5"]).
pub fn digit_tokens(value: i64) -> Vec<String> {
    let mut out = Vec::new();
    if value < 0 {
        out.push("-".to_string());
    }
    for ch in value.unsigned_abs().to_string().chars() {
        out.push(ch.to_string());
    }
    out
}

fn operand_count(difficulty: u8) -> usize {
    match difficulty {
        1 | 2 => 2,
        3 | 4 => 3,
        _ => 4,
    }
}

fn code_body_len(difficulty: u8) -> (usize, usize) {
    match difficulty {
        1 => (1, 2),
        2 => (2, 3),
        3 => (3, 5),
        4 => (5, 7),
        _ => (7, 9),
    }
}

/// Largest-remainder rounding of `total * weight_i / sum(weights)`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut short = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in order {
        if short == 0 {
            break;
        }
        counts[i] += 1;
        short -= 1;
    }
    counts
}

/// Generates the full suite for `spec`. Prompts are unique within the suite;
/// item k of a given spec is identical from run to run.
pub fn generate_tasks(spec: &GeneratorSpec) -> Result<Vec<Task>, EnvError> {
    if spec.operand_range.0 < 0 || spec.operand_range.0 > spec.operand_range.1 {
        return Err(EnvError::BadSpec("operand_range must satisfy 0 <= lo <= hi".into()));
    }
    if spec.operand_range.1 > 9_999 {
        return Err(EnvError::BadSpec("operand_range upper bound capped at 9999".into()));
    }
    if !(0.0..=1.0).contains(&spec.math_fraction) {
        return Err(EnvError::BadSpec("math_fraction must be in [0, 1]".into()));
    }
    if spec.difficulty_mix.iter().any(|w| *w < 0.0) || spec.difficulty_mix.iter().sum::<f64>() <= 0.0 {
        return Err(EnvError::BadSpec("difficulty_mix must be non-negative and non-empty".into()));
    }
    let math_count = (spec.count as f64 * spec.math_fraction).round() as usize;
    let math_count = math_count.min(spec.count);
    if math_count > 0 && spec.operators.is_empty() {
        return Err(EnvError::BadSpec("operators must be non-empty for MATH tasks".into()));
    }

    let mut slots: Vec<(TaskCategory, u8)> = Vec::with_capacity(spec.count);
    for (cat, cat_count) in
        [(TaskCategory::Math, math_count), (TaskCategory::Code, spec.count - math_count)]
    {
        for (i, n) in apportion(cat_count, &spec.difficulty_mix).iter().enumerate() {
            for _ in 0..*n {
                slots.push((cat, i as u8 + 1));
            }
        }
    }

    let budget = 10 * spec.count.max(1);
    let mut retries = 0usize;
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut tasks = Vec::with_capacity(spec.count);
    let mut per_cat = [0usize; 2];
    for (slot, (category, difficulty)) in slots.into_iter().enumerate() {
        let mut attempt = 0u64;
        loop {
            let mut rng = counter_rng([spec.seed, slot as u64, attempt, u64::from(category.id())]);
            let built = match category {
                TaskCategory::Math => build_math_task(spec, difficulty, &mut rng),
                TaskCategory::Code => build_code_task(difficulty, &mut rng),
            };
            if let Some((prompt_tokens, truth, test_cases, reference_program)) = built {
                let key = format!("{}|{}", category.id(), prompt_tokens.join(" "));
                if seen.insert(key) {
                    let prefix = if category == TaskCategory::Math { "m" } else { "c" };
                    let ordinal = per_cat[category.id() as usize];
                    per_cat[category.id() as usize] += 1;
                    tasks.push(Task {
                        id: format!("{}{}-{:04}", prefix, spec.seed, ordinal),
                        category,
                        prompt_tokens,
                        difficulty,
                        truth,
                        test_cases,
                        reference_program,
                    });
                    break;
                }
            }
            attempt += 1;
            retries += 1;
            if retries > budget {
                return Err(EnvError::InfeasibleSpec { retries });
            }
        }
    }
    Ok(tasks)
}

type BuiltTask = (Vec<String>, Option<i64>, Vec<TestCase>, Option<Vec<String>>);

fn build_math_task(
    spec: &GeneratorSpec,
    difficulty: u8,
    rng: &mut impl Rng,
) -> Option<BuiltTask> {
    let m = operand_count(difficulty);
    let (lo, hi) = spec.operand_range;
    let operands: Vec<i64> = (0..m).map(|_| rng.gen_range(lo..=hi)).collect();
    let ops: Vec<MathOp> = (0..m - 1).map(|_| *spec.operators.choose(rng).unwrap()).collect();
    let mut running = operands[0];
    for (op, v) in ops.iter().zip(&operands[1..]) {
        running = op.apply(running, *v)?;
    }
    let truth = running.rem_euclid(100);
    let mut prompt = digit_tokens(operands[0]);
    for (op, v) in ops.iter().zip(&operands[1..]) {
        prompt.push(op.token().to_string());
        prompt.extend(digit_tokens(*v));
    }
    Some((prompt, Some(truth), Vec::new(), None))
}

fn build_code_task(difficulty: u8, rng: &mut impl Rng) -> Option<BuiltTask> {
    const DEPTH_CAP: usize = 6;
    let (lo, hi) = code_body_len(difficulty);
    let body_len = rng.gen_range(lo..=hi);
    let arity: usize = if difficulty == 1 { 1 } else { rng.gen_range(1..=2) };

    let mut program = vec![Instruction::In];
    let mut depth = 1usize;
    let mut inputs_used = 1usize;
    for _ in 0..body_len {
        let mut options: Vec<Instruction> = Vec::new();
        if depth < DEPTH_CAP {
            if inputs_used < arity {
                options.push(Instruction::In);
            }
            options.push(Instruction::Push(rng.gen_range(0..=9)));
            options.push(Instruction::Dup);
        }
        if depth >= 2 {
            options.extend([Instruction::Add, Instruction::Sub, Instruction::Mul]);
            options.push(Instruction::Swap);
            options.push(Instruction::Pop);
        }
        let instr = *options.choose(rng)?;
        match instr {
            Instruction::In => inputs_used += 1,
            Instruction::Push(_) | Instruction::Dup => {}
            Instruction::Pop | Instruction::Add | Instruction::Sub | Instruction::Mul => {
                depth -= 1;
                // fallthrough adjusts for push below
            }
            _ => {}
        }
        if matches!(instr, Instruction::Push(_) | Instruction::Dup | Instruction::In) {
            depth += 1;
        }
        program.push(instr);
    }
    program.push(Instruction::Halt);

    // Sample distinct input tuples and derive expected outputs from the
    // reference program; any VM error disqualifies this draw.
    let vm = VmConfig::default();
    let mut inputs: BTreeSet<Vec<i64>> = BTreeSet::new();
    let mut guard = 0;
    while inputs.len() < 3 {
        let tuple: Vec<i64> = (0..arity).map(|_| rng.gen_range(0..=9)).collect();
        inputs.insert(tuple);
        guard += 1;
        if guard > 64 {
            return None;
        }
    }
    let mut test_cases = Vec::new();
    for input in inputs {
        let expected = run_minivm(&program, &input, &vm).ok()?;
        test_cases.push(TestCase { input, expected });
    }
    if test_cases.iter().all(|c| c.expected == test_cases[0].expected) {
        // Constant functions make weak tasks; ask for a re-draw.
        return None;
    }

    let mut prompt = Vec::new();
    for case in &test_cases {
        for v in &case.input {
            prompt.extend(digit_tokens(*v));
        }
        prompt.push("=".to_string());
        prompt.extend(digit_tokens(case.expected));
        prompt.push(";".to_string());
    }
    let program_tokens: Vec<String> = program.iter().map(|i| i.token()).collect();
    Some((prompt, None, test_cases, Some(program_tokens)))
}

/// Which teacher-trace style to render.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceStyle {
    #[serde(rename = "CONCISE")]
    Concise,
    #[serde(rename = "VERBOSE")]
    Verbose,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TeacherTrace {
    pub task_id: String,
    pub style: TraceStyle,
    /// Response tokens, EOS-terminated. Prompt tokens are not included.
    pub tokens: Vec<String>,
}

/// Renders the canonical teacher response for `task` (variant 0).
pub fn teacher_trace(task: &Task, style: TraceStyle) -> TeacherTrace {
    teacher_trace_variant(task, style, 0)
}

/// Renders a teacher response; `variant` jitters padding so a dataset can
/// carry several distinct responses per prompt and style.
pub fn teacher_trace_variant(task: &Task, style: TraceStyle, variant: u64) -> TeacherTrace {
    let tokens = match task.category {
        TaskCategory::Math => math_trace(task, style, variant),
        TaskCategory::Code => code_trace(task, style, variant),
    };
    TeacherTrace { task_id: task.id.clone(), style, tokens }
}

/// Restatement length targets per difficulty for VERBOSE MATH traces. Chosen
/// so every verbose response overflows a 64-token budget and difficulties
/// >= 3 also overflow a 128-token budget.
fn verbose_pad_target(difficulty: u8) -> usize {
    match difficulty {
        1 => 64,
        2 => 72,
        3 => 128,
        4 => 136,
        _ => 136,
    }
}

fn math_steps(task: &Task) -> (Vec<i64>, Vec<MathOp>, Vec<i64>) {
    // Re-parse the prompt: operands alternate with operator tokens.
    let mut operands: Vec<i64> = Vec::new();
    let mut ops: Vec<MathOp> = Vec::new();
    let mut digits = String::new();
    for tok in &task.prompt_tokens {
        match tok.as_str() {
            "+" | "-" | "*" if !digits.is_empty() => {
                operands.push(digits.parse().unwrap());
                digits.clear();
                ops.push(match tok.as_str() {
                    "+" => MathOp::Add,
                    "-" => MathOp::Sub,
                    _ => MathOp::Mul,
                });
            }
            d => digits.push_str(d),
        }
    }
    operands.push(digits.parse().unwrap());
    let mut running = operands[0];
    let mut intermediates = Vec::new();
    for (op, v) in ops.iter().zip(&operands[1..]) {
        running = op.apply(running, *v).unwrap();
        intermediates.push(running);
    }
    (operands, ops, intermediates)
}

fn boxed_answer(truth: i64) -> Vec<String> {
    let mut t = vec![BOX_OPEN.to_string()];
    t.extend(digit_tokens(truth));
    t.push(BOX_CLOSE.to_string());
    t.push(EOS_TOKEN.to_string());
    t
}

fn math_trace(task: &Task, style: TraceStyle, variant: u64) -> Vec<String> {
    let (operands, ops, intermediates) = math_steps(task);
    let truth = task.truth.expect("MATH task carries truth");
    let mut t: Vec<String> = Vec::new();
    match style {
        TraceStyle::Concise => {
            if variant % 2 == 0 {
                for r in &intermediates {
                    t.push("=".to_string());
                    t.extend(interleaved_digits(*r));
                }
            }
            t.extend(boxed_answer(truth));
        }
        TraceStyle::Verbose => {
            // First step echoes the prompt operands; later steps name only
            // the operator and the fresh operand so that multi-digit running
            // values are never written as raw digit runs.
            for (i, (op, b)) in ops.iter().zip(&operands[1..]).enumerate() {
                if i == 0 {
                    t.extend(digit_tokens(operands[0]));
                }
                t.push(op.token().to_string());
                t.extend(digit_tokens(*b));
                t.push("=".to_string());
                t.extend(interleaved_digits(intermediates[i]));
            }
            // Restate the final running value over and over before boxing.
            let last = *intermediates.last().unwrap();
            let unit = interleaved_digits(last);
            let target = verbose_pad_target(task.difficulty);
            let n_units = target.div_ceil(unit.len()) + (variant as usize % 3);
            for _ in 0..n_units {
                t.extend(unit.iter().cloned());
            }
            t.extend(boxed_answer(truth));
        }
    }
    t
}

/// Digits of `value`, each followed by a separator token. Responses spell
/// every number outside an answer box this way so that consecutive digit
/// pairs occur only inside `<box> ... </box>` — an order-2 context that sees
/// two adjacent digits is then always mid-answer, never mid-reasoning.
fn interleaved_digits(value: i64) -> Vec<String> {
    let mut out = Vec::new();
    for d in digit_tokens(value) {
        out.push(d);
        out.push(";".to_string());
    }
    out
}

fn code_trace(task: &Task, style: TraceStyle, variant: u64) -> Vec<String> {
    let program = task
        .reference_program
        .as_ref()
        .expect("CODE task carries its reference program");
    let body: Vec<String> = program[..program.len() - 1].to_vec();
    let mut t = Vec::new();
    match style {
        TraceStyle::Concise => {
            t.extend(body);
            for _ in 0..(variant % 2) {
                t.push("0".to_string());
                t.push("POP".to_string());
            }
        }
        TraceStyle::Verbose => {
            t.extend(body);
            let n_pad = 6 + 3 * usize::from(task.difficulty) + (variant as usize % 3);
            for _ in 0..n_pad {
                t.push("0".to_string());
                t.push("POP".to_string());
            }
        }
    }
    t.push("HALT".to_string());
    t.push(EOS_TOKEN.to_string());
    t
}

/// The registered eval split: every `stride`-th task of a suite.
pub fn eval_split(tasks: &[Task], stride: usize) -> Vec<Task> {
    tasks.iter().step_by(stride.max(1)).cloned().collect()
}
