//! Bounded stack machine for program-synthesis tasks.
//!
//! Programs are flat instruction sequences with no control flow: pushes,
//! input reads, three integer binary ops, and stack shuffles, terminated by
//! `HALT`. Execution is exact signed 64-bit (overflow is an error, never a
//! wrap), bounded by a step limit and a stack-depth cap, and completely
//! deterministic: the same program and input always produce the same outcome.
//!
//! At the token level a push is spelled with the bare digit token ("7" means
//! push 7), which keeps the shared policy vocabulary small; the parser also
//! accepts the explicit "PUSH7" spelling.

use thiserror::Error;

/// One VM instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Instruction {
    /// Push a small constant (0..=9).
    Push(u8),
    /// Pop nothing; read the next input value and push it.
    In,
    /// Pop a then b; push b + a.
    Add,
    /// Pop a then b; push b - a.
    Sub,
    /// Pop a then b; push b * a.
    Mul,
    /// Duplicate the top of stack.
    Dup,
    /// Swap the top two stack values.
    Swap,
    /// Discard the top of stack.
    Pop,
    /// Stop; the result is the top of stack.
    Halt,
}

impl Instruction {
    /// Parses one program token. Digits are pushes; opcode names are accepted
    /// both bare ("IN") and, for pushes, in the explicit "PUSH7" spelling.
    pub fn parse_token(token: &str) -> Option<Instruction> {
        match token {
            "IN" => Some(Instruction::In),
            "ADD" => Some(Instruction::Add),
            "SUB" => Some(Instruction::Sub),
            "MUL" => Some(Instruction::Mul),
            "DUP" => Some(Instruction::Dup),
            "SWAP" => Some(Instruction::Swap),
            "POP" => Some(Instruction::Pop),
            "HALT" => Some(Instruction::Halt),
            _ => {
                if let Some(d) = token.strip_prefix("PUSH") {
                    let d: u8 = d.parse().ok()?;
                    return (d <= 9).then_some(Instruction::Push(d));
                }
                if token.len() == 1 && token.as_bytes()[0].is_ascii_digit() {
                    return Some(Instruction::Push(token.as_bytes()[0] - b'0'));
                }
                None
            }
        }
    }

    /// The vocabulary token that spells this instruction.
    pub fn token(&self) -> String {
        match self {
            Instruction::Push(d) => d.to_string(),
            Instruction::In => "IN".to_string(),
            Instruction::Add => "ADD".to_string(),
            Instruction::Sub => "SUB".to_string(),
            Instruction::Mul => "MUL".to_string(),
            Instruction::Dup => "DUP".to_string(),
            Instruction::Swap => "SWAP".to_string(),
            Instruction::Pop => "POP".to_string(),
            Instruction::Halt => "HALT".to_string(),
        }
    }
}

/// Execution bounds.
#[derive(Clone, Copy, Debug)]
pub struct VmConfig {
    /// Maximum number of executed instructions before `StepLimit`.
    pub step_limit: u64,
    /// Maximum stack depth before `StackOverflow`.
    pub max_stack: usize,
}

impl Default for VmConfig {
    fn default() -> Self {
        Self { step_limit: 256, max_stack: 64 }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum VmError {
    #[error("stack underflow at pc {pc}")]
    StackUnderflow { pc: usize },
    #[error("stack overflow at pc {pc}")]
    StackOverflow { pc: usize },
    #[error("input exhausted at pc {pc}")]
    InputExhausted { pc: usize },
    #[error("step limit reached")]
    StepLimit,
    #[error("program ended without HALT")]
    NoHalt,
    #[error("empty stack at HALT")]
    EmptyStackAtHalt,
    #[error("integer overflow at pc {pc}")]
    Overflow { pc: usize },
}

/// Runs `program` on `input`, returning the value on top of the stack at
/// `HALT`. Every failure mode is a typed error; nothing panics.
pub fn run_minivm(program: &[Instruction], input: &[i64], cfg: &VmConfig) -> Result<i64, VmError> {
    let mut stack: Vec<i64> = Vec::with_capacity(8);
    let mut next_input = 0usize;
    let mut steps = 0u64;
    for (pc, instr) in program.iter().enumerate() {
        if steps >= cfg.step_limit {
            return Err(VmError::StepLimit);
        }
        steps += 1;
        match instr {
            Instruction::Push(d) => {
                if stack.len() >= cfg.max_stack {
                    return Err(VmError::StackOverflow { pc });
                }
                stack.push(i64::from(*d));
            }
            Instruction::In => {
                if next_input >= input.len() {
                    return Err(VmError::InputExhausted { pc });
                }
                if stack.len() >= cfg.max_stack {
                    return Err(VmError::StackOverflow { pc });
                }
                stack.push(input[next_input]);
                next_input += 1;
            }
            Instruction::Add | Instruction::Sub | Instruction::Mul => {
                let a = stack.pop().ok_or(VmError::StackUnderflow { pc })?;
                let b = stack.pop().ok_or(VmError::StackUnderflow { pc })?;
                let r = match instr {
                    Instruction::Add => b.checked_add(a),
                    Instruction::Sub => b.checked_sub(a),
                    _ => b.checked_mul(a),
                };
                stack.push(r.ok_or(VmError::Overflow { pc })?);
            }
            Instruction::Dup => {
                let top = *stack.last().ok_or(VmError::StackUnderflow { pc })?;
                if stack.len() >= cfg.max_stack {
                    return Err(VmError::StackOverflow { pc });
                }
                stack.push(top);
            }
            Instruction::Swap => {
                let n = stack.len();
                if n < 2 {
                    return Err(VmError::StackUnderflow { pc });
                }
                stack.swap(n - 1, n - 2);
            }
            Instruction::Pop => {
                stack.pop().ok_or(VmError::StackUnderflow { pc })?;
            }
            Instruction::Halt => {
                return stack.last().copied().ok_or(VmError::EmptyStackAtHalt);
            }
        }
    }
    Err(VmError::NoHalt)
}

/// Parses a token sequence into instructions; `None` on any unknown token.
pub fn parse_program(tokens: &[String]) -> Option<Vec<Instruction>> {
    tokens.iter().map(|t| Instruction::parse_token(t)).collect()
}
