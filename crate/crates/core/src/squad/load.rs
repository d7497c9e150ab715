use std::path::Path;

use serde_json::Value;

use super::tokenize::{tokenize, Token};
use super::{DataError, QAExample};

/// Training requires every question to have at least one mappable answer;
/// evaluation keeps questions whose answers cannot be located as spans.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadMode {
    Train,
    Eval,
}

#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub examples: Vec<QAExample>,
    /// Answers whose offset or text did not match the passage.
    pub unmappable_answers: usize,
    /// Questions dropped because no answer could be mapped (training only).
    pub skipped_questions: usize,
    /// Answers whose offsets fell inside a token and were widened to token boundaries.
    pub expanded_answers: usize,
}

pub fn load_squad(path: &Path, mode: LoadMode) -> crate::Result<LoadReport> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_squad(&text, &path.display().to_string(), mode)?)
}

fn schema(path: &str, reason: impl Into<String>) -> DataError {
    DataError::Schema {
        path: path.to_string(),
        reason: reason.into(),
    }
}

fn field<'a>(v: &'a Value, parent: &str, key: &str) -> Result<&'a Value, DataError> {
    v.get(key)
        .ok_or_else(|| schema(&format!("{parent}.{key}"), "missing field"))
}

fn array<'a>(v: &'a Value, parent: &str, key: &str) -> Result<&'a Vec<Value>, DataError> {
    field(v, parent, key)?
        .as_array()
        .ok_or_else(|| schema(&format!("{parent}.{key}"), "expected an array"))
}

fn string<'a>(v: &'a Value, parent: &str, key: &str) -> Result<&'a str, DataError> {
    field(v, parent, key)?
        .as_str()
        .ok_or_else(|| schema(&format!("{parent}.{key}"), "expected a string"))
}

/// Token span covering characters `start..end`, and whether the boundaries
/// had to be widened.
fn char_span_to_tokens(tokens: &[Token], start: usize, end: usize) -> Option<((usize, usize), bool)> {
    let first = tokens.iter().position(|t| t.end > start)?;
    let last = tokens.iter().rposition(|t| t.start < end)?;
    if first > last {
        return None;
    }
    let exact = tokens[first].start == start && tokens[last].end == end;
    Some(((first, last), !exact))
}

pub fn parse_squad(text: &str, source_name: &str, mode: LoadMode) -> Result<LoadReport, DataError> {
    let root: Value = serde_json::from_str(text).map_err(|e| DataError::Parse {
        source_name: source_name.to_string(),
        message: e.to_string(),
    })?;
    let mut report = LoadReport::default();
    for (a, article) in array(&root, "$", "data")?.iter().enumerate() {
        let apath = format!("$.data[{a}]");
        for (p, para) in array(article, &apath, "paragraphs")?.iter().enumerate() {
            let ppath = format!("{apath}.paragraphs[{p}]");
            let context = string(para, &ppath, "context")?;
            let chars: Vec<char> = context.chars().collect();
            let passage_tokens = tokenize(context);
            for (q, qa) in array(para, &ppath, "qas")?.iter().enumerate() {
                let qpath = format!("{ppath}.qas[{q}]");
                let id = string(qa, &qpath, "id")?;
                let question = string(qa, &qpath, "question")?;
                let answers = array(qa, &qpath, "answers")?;
                if answers.is_empty() && mode == LoadMode::Train {
                    return Err(schema(
                        &format!("{qpath}.answers"),
                        "training question has no answers",
                    ));
                }
                let mut spans = Vec::new();
                let mut texts = Vec::new();
                for (k, ans) in answers.iter().enumerate() {
                    let kpath = format!("{qpath}.answers[{k}]");
                    let ans_text = string(ans, &kpath, "text")?;
                    let start = field(ans, &kpath, "answer_start")?.as_u64().ok_or_else(|| {
                        schema(
                            &format!("{kpath}.answer_start"),
                            "expected a non-negative integer",
                        )
                    })? as usize;
                    texts.push(ans_text.to_string());
                    let end = start + ans_text.chars().count();
                    let matches =
                        end <= chars.len() && chars[start..end].iter().copied().eq(ans_text.chars());
                    let mapped = matches
                        .then(|| char_span_to_tokens(&passage_tokens, start, end))
                        .flatten();
                    match mapped {
                        Some((span, widened)) => {
                            if widened {
                                log::debug!(
                                    "{kpath}: answer offset inside a token, widened to token boundaries"
                                );
                                report.expanded_answers += 1;
                            }
                            spans.push(span);
                        }
                        None => {
                            log::warn!("{kpath}: answer {ans_text:?} not found at offset {start}; skipped");
                            report.unmappable_answers += 1;
                        }
                    }
                }
                if spans.is_empty() && mode == LoadMode::Train {
                    report.skipped_questions += 1;
                    continue;
                }
                report.examples.push(QAExample {
                    id: id.to_string(),
                    passage: context.to_string(),
                    question: question.to_string(),
                    passage_tokens: passage_tokens.clone(),
                    question_tokens: tokenize(question),
                    spans,
                    answers: texts,
                });
            }
        }
    }
    if report.unmappable_answers > 0 || report.skipped_questions > 0 {
        log::warn!(
            "{source_name}: {} unmappable answers, {} questions skipped",
            report.unmappable_answers,
            report.skipped_questions
        );
    }
    Ok(report)
}
