//! Rule-based answer verification.
//!
//! Every response maps to a `RewardScore`: a binary value (1 only for
//! `CORRECT`) plus a verdict explaining why. MATH answers are read from the
//! last well-formed answer wrapper — either the token-level `<box> ... </box>`
//! pair or a LaTeX-style `\boxed{...}` with balanced braces — and compared as
//! canonical integers (optional sign, leading zeros stripped). CODE responses
//! are cut at the first `HALT`, parsed as VM instructions, and must pass
//! every test case; scoring is all-or-nothing.
//!
//! Over-budget (truncated) responses are never scored as answers: they carry
//! the `TRUNCATED` verdict, and [`reward_assign`] decides what the trainer
//! does with them — drop them from the group (`FILTER`) or keep them at
//! reward 0 (`PENALTY`). Binary rewards keep mean-reward logs readable as
//! plain accuracy.

use crate::environment::{Task, TaskCategory, BOX_CLOSE, BOX_OPEN, EOS_TOKEN};
use crate::minivm::{parse_program, run_minivm, VmConfig, VmError};
use crate::policy::{PolicyParams, Rollout};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Correct,
    WrongAnswer,
    FormatError,
    VmError,
    Timeout,
    Truncated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardScore {
    /// 1.0 for CORRECT, 0.0 otherwise.
    pub value: f64,
    pub verdict: Verdict,
    /// Per-test-case outcomes (CODE only; empty for MATH).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_case: Vec<bool>,
}

impl RewardScore {
    fn of(verdict: Verdict) -> Self {
        let value = if verdict == Verdict::Correct { 1.0 } else { 0.0 };
        Self { value, verdict, per_case: Vec::new() }
    }
}

/// How a trainer treats truncated rollouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OverlongMode {
    /// Remove truncated rollouts from both group statistics and the loss.
    Filter,
    /// Keep them with reward 0.
    Penalty,
}

/// One verification outcome, as logged per rollout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub task_id: String,
    pub rollout_index: usize,
    pub verdict: Verdict,
    pub value: f64,
    pub length: usize,
    pub truncated: bool,
}

/// Finds the content of the last well-formed answer wrapper in `response`.
///
/// Recognizes `\boxed{...}` (balanced braces) and `<box> ... </box>`.
/// Wrappers that never close are ignored; among well-formed ones the one
/// starting last wins.
pub fn extract_boxed(response: &str) -> Option<String> {
    let mut best: Option<(usize, String)> = None;

    let bytes = response.as_bytes();
    let mut i = 0;
    while let Some(off) = response[i..].find("\\boxed{") {
        let start = i + off;
        let mut depth = 1usize;
        let mut j = start + "\\boxed{".len();
        let mut end = None;
        while j < bytes.len() {
            match bytes[j] {
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(j);
                        break;
                    }
                }
                _ => {}
            }
            j += 1;
        }
        if let Some(e) = end {
            let content = response[start + "\\boxed{".len()..e].to_string();
            if best.as_ref().map_or(true, |(s, _)| start > *s) {
                best = Some((start, content));
            }
        }
        i = start + 1;
    }

    let mut i = 0;
    while let Some(off) = response[i..].find(BOX_OPEN) {
        let start = i + off;
        let after = start + BOX_OPEN.len();
        if let Some(close) = response[after..].find(BOX_CLOSE) {
            let content = response[after..after + close].trim().to_string();
            if best.as_ref().map_or(true, |(s, _)| start > *s) {
                best = Some((start, content));
            }
        }
        i = start + 1;
    }

    best.map(|(_, content)| content)
}

/// Canonical integer read: optional sign, digits, internal whitespace
/// collapsed, leading zeros stripped. Anything else is a format error.
fn canonical_int(content: &str) -> Option<i64> {
    let compact: String = content.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.is_empty() {
        return None;
    }
    let (sign, digits) = match compact.strip_prefix('-') {
        Some(rest) => (-1i64, rest),
        None => (1i64, compact.strip_prefix('+').unwrap_or(&compact)),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse::<i64>().ok().map(|v| sign * v)
}

fn strip_trailing_eos(tokens: &[String]) -> &[String] {
    match tokens.last() {
        Some(t) if t == EOS_TOKEN => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

/// Verifies a MATH response (token strings, EOS already optional).
pub fn verify_math(task: &Task, tokens: &[String], truncated: bool) -> RewardScore {
    debug_assert_eq!(task.category, TaskCategory::Math);
    if truncated {
        return RewardScore::of(Verdict::Truncated);
    }
    let text = strip_trailing_eos(tokens).join(" ");
    let Some(content) = extract_boxed(&text) else {
        return RewardScore::of(Verdict::FormatError);
    };
    let Some(answer) = canonical_int(&content) else {
        return RewardScore::of(Verdict::FormatError);
    };
    if Some(answer) == task.truth {
        RewardScore::of(Verdict::Correct)
    } else {
        RewardScore::of(Verdict::WrongAnswer)
    }
}

/// Verifies a CODE response: tokens up to and including the first `HALT`
/// form the program; it must parse and pass every test case.
pub fn verify_code(task: &Task, tokens: &[String], truncated: bool, vm: &VmConfig) -> RewardScore {
    debug_assert_eq!(task.category, TaskCategory::Code);
    if truncated {
        return RewardScore::of(Verdict::Truncated);
    }
    let body = strip_trailing_eos(tokens);
    let end = body.iter().position(|t| t == "HALT").map(|i| i + 1).unwrap_or(body.len());
    let Some(program) = parse_program(&body[..end]) else {
        return RewardScore::of(Verdict::FormatError);
    };
    let mut per_case = Vec::with_capacity(task.test_cases.len());
    let mut saw_timeout = false;
    let mut saw_vm_error = false;
    for case in &task.test_cases {
        match run_minivm(&program, &case.input, vm) {
            Ok(v) => per_case.push(v == case.expected),
            Err(VmError::StepLimit) => {
                per_case.push(false);
                saw_timeout = true;
            }
            Err(_) => {
                per_case.push(false);
                saw_vm_error = true;
            }
        }
    }
    let all_pass = !per_case.is_empty() && per_case.iter().all(|p| *p);
    let verdict = if all_pass {
        Verdict::Correct
    } else if saw_timeout {
        Verdict::Timeout
    } else if saw_vm_error {
        Verdict::VmError
    } else {
        Verdict::WrongAnswer
    };
    let mut score = RewardScore::of(verdict);
    score.per_case = per_case;
    score
}

/// Category dispatch over token strings.
pub fn verify(task: &Task, tokens: &[String], truncated: bool, vm: &VmConfig) -> RewardScore {
    match task.category {
        TaskCategory::Math => verify_math(task, tokens, truncated),
        TaskCategory::Code => verify_code(task, tokens, truncated, vm),
    }
}

/// Verifies a sampled rollout by decoding its token ids.
pub fn verify_rollout(
    params: &PolicyParams,
    task: &Task,
    rollout: &Rollout,
    vm: &VmConfig,
) -> RewardScore {
    let tokens = params.decode_tokens(&rollout.tokens);
    verify(task, &tokens, rollout.truncated, vm)
}

/// Maps a verification score to (reward, masked) under an overlong mode.
///
/// Non-truncated rollouts keep their score in both modes. Truncated ones are
/// masked out under `FILTER` and kept at reward 0 under `PENALTY`.
pub fn reward_assign(score: &RewardScore, truncated: bool, mode: OverlongMode) -> (f64, bool) {
    if !truncated {
        return (score.value, false);
    }
    match mode {
        OverlongMode::Filter => (0.0, true),
        OverlongMode::Penalty => (0.0, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{
        generate_tasks, teacher_trace, GeneratorSpec, TraceStyle,
    };

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    fn math_task(truth: i64) -> Task {
        Task {
            id: "m-test".into(),
            category: TaskCategory::Math,
            prompt_tokens: toks(&["8", "*", "9", "+", "3"]),
            difficulty: 3,
            truth: Some(truth),
            test_cases: vec![],
            reference_program: None,
        }
    }

    #[test]
    fn extraction_handles_latex_wrappers() {
        assert_eq!(extract_boxed("\\boxed{\\frac{1}{2}}").as_deref(), Some("\\frac{1}{2}"));
        assert_eq!(extract_boxed("Answer: \\boxed{12} trailing").as_deref(), Some("12"));
        assert_eq!(extract_boxed("\\boxed{1} then \\boxed{2}").as_deref(), Some("2"));
        assert_eq!(extract_boxed("\\boxed{unclosed"), None);
        // An unclosed later wrapper does not shadow an earlier good one.
        assert_eq!(extract_boxed("\\boxed{3} \\boxed{oops").as_deref(), Some("3"));
    }

    #[test]
    fn extraction_handles_token_wrappers() {
        assert_eq!(extract_boxed("= 7 5 <box> 7 5 </box> <eos>").as_deref(), Some("7 5"));
        assert_eq!(extract_boxed("<box> 1 </box> <box> 2 </box>").as_deref(), Some("2"));
        assert_eq!(extract_boxed("<box> 9 9"), None);
        // Mixed styles: the last well-formed wrapper wins regardless of kind.
        assert_eq!(extract_boxed("\\boxed{4} and <box> 5 </box>").as_deref(), Some("5"));
    }

    #[test]
    fn canonicalization_is_sign_and_zero_tolerant() {
        assert_eq!(canonical_int("75"), Some(75));
        assert_eq!(canonical_int("0 7 5"), Some(75));
        assert_eq!(canonical_int("075"), Some(75));
        assert_eq!(canonical_int("- 7"), Some(-7));
        assert_eq!(canonical_int("+7"), Some(7));
        assert_eq!(canonical_int(""), None);
        assert_eq!(canonical_int("-"), None);
        assert_eq!(canonical_int("\\frac{1}{2}"), None);
    }

    #[test]
    fn math_verdicts_cover_the_outcomes() {
        let task = math_task(75);
        let correct = verify_math(&task, &toks(&["<box>", "7", "5", "</box>", "<eos>"]), false);
        assert_eq!((correct.value, correct.verdict), (1.0, Verdict::Correct));
        // Leading zeros canonicalize away.
        let padded = verify_math(&task, &toks(&["<box>", "0", "7", "5", "</box>"]), false);
        assert_eq!(padded.verdict, Verdict::Correct);
        let wrong = verify_math(&task, &toks(&["<box>", "7", "4", "</box>"]), false);
        assert_eq!((wrong.value, wrong.verdict), (0.0, Verdict::WrongAnswer));
        let unboxed = verify_math(&task, &toks(&["7", "5"]), false);
        assert_eq!(unboxed.verdict, Verdict::FormatError);
        let empty_box = verify_math(&task, &toks(&["<box>", "</box>"]), false);
        assert_eq!(empty_box.verdict, Verdict::FormatError);
        let truncated = verify_math(&task, &toks(&["<box>", "7"]), true);
        assert_eq!(truncated.verdict, Verdict::Truncated);
    }

    fn code_task() -> Task {
        // f(a, b) = a - b.
        Task {
            id: "c-test".into(),
            category: TaskCategory::Code,
            prompt_tokens: toks(&["3", "4", "=", "-", "1", ";"]),
            difficulty: 2,
            truth: None,
            test_cases: vec![
                TestCase { input: vec![3, 4], expected: -1 },
                TestCase { input: vec![9, 2], expected: 7 },
            ],
            reference_program: Some(toks(&["IN", "IN", "SUB", "HALT"])),
        }
    }

    use crate::environment::TestCase;

    #[test]
    fn code_verdicts_cover_the_outcomes() {
        let task = code_task();
        let vm = VmConfig::default();
        let ok = verify_code(&task, &toks(&["IN", "IN", "SUB", "HALT", "<eos>"]), false, &vm);
        assert_eq!((ok.value, ok.verdict), (1.0, Verdict::Correct));
        assert_eq!(ok.per_case, vec![true, true]);
        // Tokens after the first HALT are ignored.
        let tail = verify_code(&task, &toks(&["IN", "IN", "SUB", "HALT", "9", "9"]), false, &vm);
        assert_eq!(tail.verdict, Verdict::Correct);
        // Wrong on one case is wrong overall (all-or-nothing).
        let add = verify_code(&task, &toks(&["IN", "IN", "ADD", "HALT"]), false, &vm);
        assert_eq!((add.value, add.verdict), (0.0, Verdict::WrongAnswer));
        assert_eq!(add.per_case, vec![false, false]);
        // Non-instruction tokens make the program unparseable.
        let garbage = verify_code(&task, &toks(&["IN", "+", "HALT"]), false, &vm);
        assert_eq!(garbage.verdict, Verdict::FormatError);
        // Underflow is a VM error.
        let under = verify_code(&task, &toks(&["ADD", "HALT"]), false, &vm);
        assert_eq!(under.verdict, Verdict::VmError);
        // Missing HALT runs off the end of the program.
        let nohalt = verify_code(&task, &toks(&["IN", "IN", "SUB", "<eos>"]), false, &vm);
        assert_eq!(nohalt.verdict, Verdict::VmError);
        let trunc = verify_code(&task, &toks(&["IN", "IN"]), true, &vm);
        assert_eq!(trunc.verdict, Verdict::Truncated);
    }

    #[test]
    fn timeout_maps_to_its_own_verdict() {
        let task = code_task();
        let vm = VmConfig { step_limit: 3, ..VmConfig::default() };
        let slow = verify_code(&task, &toks(&["IN", "IN", "SUB", "DUP", "POP", "HALT"]), false, &vm);
        assert_eq!(slow.verdict, Verdict::Timeout);
    }

    #[test]
    fn reward_assignment_by_mode() {
        let correct = RewardScore::of(Verdict::Correct);
        let truncated = RewardScore::of(Verdict::Truncated);
        assert_eq!(reward_assign(&correct, false, OverlongMode::Filter), (1.0, false));
        assert_eq!(reward_assign(&correct, false, OverlongMode::Penalty), (1.0, false));
        assert_eq!(reward_assign(&truncated, true, OverlongMode::Filter), (0.0, true));
        assert_eq!(reward_assign(&truncated, true, OverlongMode::Penalty), (0.0, false));
    }

    #[test]
    fn teacher_traces_verify_correct_in_both_styles() {
        let spec = GeneratorSpec { math_fraction: 0.5, ..GeneratorSpec::math(41, 60) };
        let vm = VmConfig::default();
        for task in generate_tasks(&spec).unwrap() {
            for style in [TraceStyle::Concise, TraceStyle::Verbose] {
                let trace = teacher_trace(&task, style);
                let score = verify(&task, &trace.tokens, false, &vm);
                assert_eq!(
                    score.verdict,
                    Verdict::Correct,
                    "task {} {:?} trace failed: {:?}",
                    task.id,
                    style,
                    score
                );
            }
        }
    }
}
