use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{DataError, QAExample};

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(prediction: &str, gold: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(gold)
}

/// Token-overlap F1 in `[0, 1]` after normalization. Two answers that both
/// normalize to nothing score 1.
pub fn f1_score(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / pt.len() as f64;
    let recall = same as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub id: String,
    pub prediction: String,
    /// 0 or 100.
    pub em: f64,
    /// In `[0, 100]`.
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub em: f64,
    pub f1: f64,
    pub count: usize,
    pub missing: usize,
    pub questions: Vec<QuestionScore>,
}

/// Scores predictions against every gold answer of each example, keeping the
/// best match per question. Questions without gold answers are scored
/// against the empty answer. A missing prediction scores 0 with a warning,
/// or is an error when `strict`.
pub fn evaluate(
    predictions: &HashMap<String, String>,
    examples: &[QAExample],
    strict: bool,
) -> Result<EvalReport, DataError> {
    let mut questions = Vec::with_capacity(examples.len());
    let mut missing = 0;
    for ex in examples {
        let Some(pred) = predictions.get(&ex.id) else {
            if strict {
                return Err(DataError::MissingPrediction { id: ex.id.clone() });
            }
            log::warn!("no prediction for question {}; scored 0", ex.id);
            missing += 1;
            questions.push(QuestionScore {
                id: ex.id.clone(),
                prediction: String::new(),
                em: 0.0,
                f1: 0.0,
            });
            continue;
        };
        let empty = [String::new()];
        let golds: &[String] = if ex.answers.is_empty() {
            &empty
        } else {
            &ex.answers
        };
        let em = golds.iter().any(|g| exact_match(pred, g));
        let f1 = golds.iter().map(|g| f1_score(pred, g)).fold(0.0, f64::max);
        questions.push(QuestionScore {
            id: ex.id.clone(),
            prediction: pred.clone(),
            em: if em { 100.0 } else { 0.0 },
            f1: 100.0 * f1,
        });
    }
    let n = questions.len();
    let mean = |f: fn(&QuestionScore) -> f64| {
        if n == 0 {
            0.0
        } else {
            questions.iter().map(f).sum::<f64>() / n as f64
        }
    };
    Ok(EvalReport {
        em: mean(|q| q.em),
        f1: mean(|q| q.f1),
        count: n,
        missing,
        questions,
    })
}
