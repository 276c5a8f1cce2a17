//! Two-shot arithmetic prompts:
//! `"What is X <op> Y? A: Z, What is X <op> Y? A: Z, What is X <op> Y? A:"`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};
use crate::tokenizer::token_count;
use crate::types::{DomainTag, SequenceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Add,
    Sub,
    Mul,
    Div,
}

impl Operation {
    pub fn word(self) -> &'static str {
        match self {
            Operation::Add => "plus",
            Operation::Sub => "minus",
            Operation::Mul => "times",
            Operation::Div => "divided by",
        }
    }

    fn apply(self, x: u32, y: u32) -> Option<u32> {
        match self {
            Operation::Add => Some(x + y),
            Operation::Sub => x.checked_sub(y),
            Operation::Mul => Some(x * y),
            Operation::Div => (y != 0 && x.is_multiple_of(y)).then(|| x / y),
        }
    }
}

/// One of the eight `{1,2}-digit × {add, sub, mul, div}` tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArithmeticTask {
    pub digits: u8,
    pub op: Operation,
}

impl ArithmeticTask {
    pub fn all() -> Vec<ArithmeticTask> {
        let mut v = Vec::with_capacity(8);
        for digits in [1, 2] {
            for op in [Operation::Add, Operation::Sub, Operation::Mul, Operation::Div] {
                v.push(ArithmeticTask { digits, op });
            }
        }
        v
    }

    fn operand_range(self) -> std::ops::RangeInclusive<u32> {
        if self.digits == 1 {
            0..=9
        } else {
            10..=99
        }
    }

    /// Draws a question whose answer is a non-negative integer. Subtraction
    /// keeps `X >= Y`; division picks `Y` among the divisors of `X`.
    fn draw<R: Rng>(self, rng: &mut R) -> (u32, u32, u32) {
        let range = self.operand_range();
        match self.op {
            Operation::Add | Operation::Mul => {
                let x = rng.random_range(range.clone());
                let y = rng.random_range(range);
                (x, y, self.op.apply(x, y).expect("always defined"))
            }
            Operation::Sub => {
                let a = rng.random_range(range.clone());
                let b = rng.random_range(range);
                let (x, y) = (a.max(b), a.min(b));
                (x, y, x - y)
            }
            Operation::Div => {
                let low = if self.digits == 1 { 1 } else { 10 };
                let x = rng.random_range(low..=*range.end());
                let divisors: Vec<u32> = (1..=x).filter(|d| x % d == 0).collect();
                let y = divisors[rng.random_range(0..divisors.len())];
                (x, y, x / y)
            }
        }
    }
}

impl fmt::Display for ArithmeticTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.op {
            Operation::Add => "add",
            Operation::Sub => "sub",
            Operation::Mul => "mul",
            Operation::Div => "div",
        };
        write!(f, "{}digit_{op}", self.digits)
    }
}

impl FromStr for ArithmeticTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArithmeticTask::all()
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown arithmetic task {s:?} (e.g. 1digit_add, 2digit_div)"))
            })
    }
}

fn render(task: ArithmeticTask, shots: &[(u32, u32, u32)], query: (u32, u32)) -> String {
    let mut out = String::new();
    for &(x, y, z) in shots {
        out.push_str(&format!("What is {x} {} {y}? A: {z}, ", task.op.word()));
    }
    out.push_str(&format!("What is {} {} {}? A:", query.0, task.op.word(), query.1));
    out
}

/// `count` prompts, each with two answered shots and one open question.
pub fn synth_arithmetic(task: ArithmeticTask, count: usize, seed: u64) -> Result<Corpus> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be >= 1".into()));
    }
    if !(1..=2).contains(&task.digits) {
        return Err(Error::InvalidArgument(format!(
            "digits must be 1 or 2, got {}",
            task.digits
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lines: Vec<String> = (0..count)
        .map(|_| {
            let shots = [task.draw(&mut rng), task.draw(&mut rng)];
            let (x, y, _) = task.draw(&mut rng);
            render(task, &shots, (x, y))
        })
        .collect();
    let token_count = token_count(&lines[0]);
    Ok(Corpus {
        spec: SequenceSpec::new(token_count, lines.len(), DomainTag::Arithmetic, None)?,
        lines,
        generator_id: format!("arithmetic/{task}"),
        seed: Some(seed),
        variant: None,
    })
}

/// Parses a prompt against the template and checks every stated answer.
pub fn check_arithmetic_prompt(prompt: &str, op: Operation) -> bool {
    let parts: Vec<&str> = prompt.split(", What is ").collect();
    if parts.len() != 3 || !parts[0].starts_with("What is ") {
        return false;
    }
    let question = |s: &str| -> Option<(u32, u32, Option<u32>)> {
        let s = s.strip_prefix("What is ").unwrap_or(s);
        let (q, a) = s.split_once("? A:")?;
        let (x, y) = q.split_once(&format!(" {} ", op.word()))?;
        let answer = match a.trim() {
            "" => None,
            z => Some(z.parse().ok()?),
        };
        Some((x.parse().ok()?, y.parse().ok()?, answer))
    };
    let mut parsed = Vec::new();
    for p in &parts {
        match question(p) {
            Some(q) => parsed.push(q),
            None => return false,
        }
    }
    let answered_ok = parsed[..2].iter().all(|&(x, y, z)| z.is_some() && op.apply(x, y) == z);
    answered_ok && parsed[2].2.is_none() && op.apply(parsed[2].0, parsed[2].1).is_some()
}
