//! Question-answering data: examples, SQuAD v1.1 loading, synthetic cloze
//! data and EM/F1 scoring.

mod load;
mod metrics;
mod synthetic;
mod tokenize;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use load::{load_squad, parse_squad, LoadMode, LoadReport};
pub use metrics::{evaluate, exact_match, f1_score, normalize_answer, EvalReport, QuestionScore};
pub use synthetic::{generate_synthetic, SyntheticSpec, QUESTION_PREFIX};
pub use tokenize::{tokenize, Token};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed JSON in {source_name}: {message}")]
    Parse { source_name: String, message: String },
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("no prediction for question {id}")]
    MissingPrediction { id: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub passage: String,
    pub question: String,
    pub passage_tokens: Vec<Token>,
    pub question_tokens: Vec<Token>,
    /// Inclusive token spans; the first is the training target.
    pub spans: Vec<(usize, usize)>,
    pub answers: Vec<String>,
}

impl QAExample {
    pub fn passage_words(&self) -> Vec<String> {
        self.passage_tokens.iter().map(|t| t.text.clone()).collect()
    }

    pub fn question_words(&self) -> Vec<String> {
        self.question_tokens.iter().map(|t| t.text.clone()).collect()
    }

    /// Passage text covered by tokens `start..=end`, including inner whitespace.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        let (Some(a), Some(b)) = (self.passage_tokens.get(start), self.passage_tokens.get(end)) else {
            return String::new();
        };
        if a.start >= b.end {
            return String::new();
        }
        self.passage.chars().skip(a.start).take(b.end - a.start).collect()
    }

    pub fn gold_span(&self) -> Option<(usize, usize)> {
        self.spans.first().copied()
    }
}

/// One JSON object per line.
pub fn write_jsonl(path: &Path, examples: &[QAExample]) -> crate::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex).map_err(|e| crate::Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> crate::Result<Vec<QAExample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: QAExample = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            source_name: format!("{} line {}", path.display(), n + 1),
            message: e.to_string(),
        })?;
        for &(s, e) in &ex.spans {
            if s > e || e >= ex.passage_tokens.len() {
                return Err(DataError::Schema {
                    path: format!("{} line {}", path.display(), n + 1),
                    reason: format!("span ({s}, {e}) outside {} tokens", ex.passage_tokens.len()),
                }
                .into());
            }
        }
        out.push(ex);
    }
    Ok(out)
}

/// Reads SQuAD JSON or JSON-lines, chosen by extension (`.jsonl` for the latter).
pub fn load_dataset(path: &Path, mode: LoadMode) -> crate::Result<Vec<QAExample>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        read_jsonl(path)
    } else {
        Ok(load_squad(path, mode)?.examples)
    }
}
