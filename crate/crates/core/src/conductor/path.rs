//! Path expressions.
//!
//! ```text
//! STEP  := "LQ" | "LS" | "Fi" | "Fo"
//! GROUP := "(" SEQ ")" "x" INT
//! SEQ   := (STEP | GROUP) ("->" (STEP | GROUP))*
//! ```
//!
//! Groups are expanded during parsing, so a [`PhasePath`] is always a flat
//! list of steps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Step {
    #[serde(rename = "LQ")]
    QpAttention,
    #[serde(rename = "LS")]
    SelfAttention,
    #[serde(rename = "Fi")]
    InnerFusion,
    #[serde(rename = "Fo")]
    OuterFusion,
}

impl Step {
    pub const ALL: [Step; 4] = [
        Step::QpAttention,
        Step::SelfAttention,
        Step::InnerFusion,
        Step::OuterFusion,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Step::QpAttention => "LQ",
            Step::SelfAttention => "LS",
            Step::InnerFusion => "Fi",
            Step::OuterFusion => "Fo",
        }
    }

    pub fn is_attention(self) -> bool {
        matches!(self, Step::QpAttention | Step::SelfAttention)
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Structural rules every path must satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    NoAttention,
    FirstAttentionIsQp,
    InnerFollowsAttention,
    OuterFollowsBlock,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::NoAttention => "path must contain at least one attention step",
            Rule::FirstAttentionIsQp => "first attention step must be question-passage attention (LQ)",
            Rule::InnerFollowsAttention => {
                "inner fusion (Fi) must immediately follow a single attention step"
            }
            Rule::OuterFollowsBlock => {
                "outer fusion (Fo) must follow a contiguous block of same-kind attention steps"
            }
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathError {
    #[error("path syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    /// `step` is the 0-based index into the flattened path.
    #[error("invalid path at step {step}: {rule}")]
    Invalid { rule: Rule, step: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PhasePath {
    steps: Vec<Step>,
}

impl PhasePath {
    /// Validates an already-flat step list.
    pub fn new(steps: Vec<Step>) -> Result<Self, PathError> {
        validate(&steps)?;
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Canonical flat form, e.g. `LQ->LQ->Fo`.
    pub fn render(&self) -> String {
        self.steps
            .iter()
            .map(|s| s.token())
            .collect::<Vec<_>>()
            .join("->")
    }

    pub fn count(&self, step: Step) -> usize {
        self.steps.iter().filter(|&&s| s == step).count()
    }
}

impl fmt::Display for PhasePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for PhasePath {
    type Err = PathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_path(s)
    }
}

impl Serialize for PhasePath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for PhasePath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_path(&s).map_err(serde::de::Error::custom)
    }
}

pub fn parse_path(expr: &str) -> Result<PhasePath, PathError> {
    let mut p = Parser {
        chars: expr.chars().collect(),
        pos: 0,
    };
    let steps = p.seq()?;
    p.skip_ws();
    if p.pos < p.chars.len() {
        return Err(p.error("unexpected trailing input"));
    }
    PhasePath::new(steps)
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn error(&self, message: &str) -> PathError {
        PathError::Syntax {
            pos: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, lit: &str) -> bool {
        self.skip_ws();
        let n = lit.chars().count();
        if self.pos + n <= self.chars.len()
            && self.chars[self.pos..self.pos + n].iter().copied().eq(lit.chars())
        {
            self.pos += n;
            true
        } else {
            false
        }
    }

    fn seq(&mut self) -> Result<Vec<Step>, PathError> {
        let mut out = self.item()?;
        while self.eat("->") {
            out.extend(self.item()?);
        }
        Ok(out)
    }

    fn item(&mut self) -> Result<Vec<Step>, PathError> {
        self.skip_ws();
        if self.eat("(") {
            let inner = self.seq()?;
            if !self.eat(")") {
                return Err(self.error("expected ')'"));
            }
            if !self.eat("x") {
                return Err(self.error("expected 'x' and a repeat count after group"));
            }
            let start = self.pos;
            while self.chars.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.error("expected repeat count"));
            }
            let digits: String = self.chars[start..self.pos].iter().collect();
            let count: usize = match digits.parse() {
                Ok(c) if c >= 1 => c,
                _ => {
                    return Err(PathError::Syntax {
                        pos: start,
                        message: format!("repeat count must be a positive integer, got {digits}"),
                    })
                }
            };
            let mut out = Vec::with_capacity(inner.len() * count);
            for _ in 0..count {
                out.extend_from_slice(&inner);
            }
            return Ok(out);
        }
        for step in Step::ALL {
            if self.eat(step.token()) {
                return Ok(vec![step]);
            }
        }
        Err(self.error("expected LQ, LS, Fi, Fo or '('"))
    }
}

fn validate(steps: &[Step]) -> Result<(), PathError> {
    let Some(first) = steps.iter().position(|s| s.is_attention()) else {
        return Err(PathError::Invalid {
            rule: Rule::NoAttention,
            step: 0,
        });
    };
    if steps[first] != Step::QpAttention {
        return Err(PathError::Invalid {
            rule: Rule::FirstAttentionIsQp,
            step: first,
        });
    }
    for (i, &s) in steps.iter().enumerate() {
        let invalid = |rule| Err(PathError::Invalid { rule, step: i });
        match s {
            Step::InnerFusion => {
                if i == 0 || !steps[i - 1].is_attention() {
                    return invalid(Rule::InnerFollowsAttention);
                }
            }
            Step::OuterFusion
                if i == 0 || steps[i - 1] == Step::OuterFusion || outer_block(steps, i).is_empty() =>
            {
                return invalid(Rule::OuterFollowsBlock);
            }
            _ => {}
        }
    }
    Ok(())
}

/// Indices of the attention steps an outer fusion at `at` concatenates: the
/// longest run of same-kind attention units (each optionally followed by one
/// inner fusion) ending right before `at`.
pub(crate) fn outer_block(steps: &[Step], at: usize) -> Vec<usize> {
    let mut block = Vec::new();
    let mut kind = None;
    let mut i = at;
    while i > 0 {
        let mut j = i - 1;
        if steps[j] == Step::InnerFusion {
            if j == 0 {
                break;
            }
            j -= 1;
        }
        let s = steps[j];
        if !s.is_attention() || kind.is_some_and(|k| k != s) {
            break;
        }
        kind = Some(s);
        block.push(j);
        i = j;
    }
    block.reverse();
    block
}
