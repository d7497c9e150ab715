//! Cloze-style synthetic data. Each passage holds a key token `k` directly
//! followed by a 1-3 token answer, plus one distractor run of answer-pool
//! tokens elsewhere. The question is a fixed prefix followed by `k`.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use super::QAExample;
use crate::{Error, Result};

pub const QUESTION_PREFIX: [&str; 2] = ["what", "follows"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub examples: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocab_size: 50,
            min_len: 20,
            max_len: 30,
            examples: 200,
            seed: 7,
        }
    }
}

const MAX_ANSWER: usize = 3;
const MAX_DISTRACTOR: usize = 2;

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.vocab_size < 20 {
            return Err(Error::Config(format!(
                "synthetic vocabulary must have at least 20 tokens, got {}",
                self.vocab_size
            )));
        }
        if self.min_len < 8 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "synthetic passage lengths need 8 <= min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }

    fn answer_pool_size(&self) -> usize {
        (self.vocab_size / 5).max(MAX_ANSWER)
    }
}

/// Pure function of `spec`: the same spec always gives the same dataset.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<QAExample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let words: Vec<String> = (0..spec.vocab_size).map(|i| format!("w{i}")).collect();
    let split = spec.vocab_size - spec.answer_pool_size();
    let (keys, answers) = words.split_at(split);
    (0..spec.examples)
        .map(|i| one_example(spec, i, keys, answers, &mut rng))
        .collect()
}

fn one_example(
    spec: &SyntheticSpec,
    index: usize,
    keys: &[String],
    pool: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<QAExample> {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let key = keys.choose(rng).expect("non-empty key pool").clone();
    let answer_len = rng.random_range(1..=MAX_ANSWER);
    let distractor_len = rng.random_range(1..=MAX_DISTRACTOR);
    let filler_len = len
        .checked_sub(1 + answer_len + distractor_len)
        .filter(|&f| f >= 2)
        .ok_or_else(|| {
            Error::Config(format!(
                "passage length {len} too short for answer and distractor"
            ))
        })?;

    let fillers: Vec<&String> = keys.iter().filter(|k| **k != key).collect();
    let filler: Vec<String> = (0..filler_len)
        .map(|_| (*fillers.choose(rng).expect("filler pool")).clone())
        .collect();
    let answer: Vec<String> = (0..answer_len)
        .map(|_| pool.choose(rng).expect("pool").clone())
        .collect();
    let distractor: Vec<String> = (0..distractor_len)
        .map(|_| pool.choose(rng).expect("pool").clone())
        .collect();

    // Two distinct gaps between filler tokens keep the runs apart.
    let mut gaps: Vec<usize> = (0..=filler_len).collect();
    gaps.shuffle(rng);
    let (answer_gap, distractor_gap) = (gaps[0], gaps[1]);
    let mut tokens = Vec::with_capacity(len);
    let mut answer_start = 0;
    let mut filler = filler.into_iter();
    for g in 0..=filler_len {
        if g == answer_gap {
            tokens.push(key.clone());
            answer_start = tokens.len();
            tokens.extend(answer.iter().cloned());
        }
        if g == distractor_gap {
            tokens.extend(distractor.iter().cloned());
        }
        tokens.extend(filler.next());
    }
    debug_assert_eq!(tokens.len(), len);

    let passage = tokens.join(" ");
    let question = QUESTION_PREFIX
        .iter()
        .map(|s| s.to_string())
        .chain([key])
        .collect::<Vec<_>>()
        .join(" ");
    let passage_tokens = tokenize(&passage);
    let span = (answer_start, answer_start + answer_len - 1);
    let mut ex = QAExample {
        id: format!("synth-{}-{index}", spec.seed),
        passage,
        question_tokens: tokenize(&question),
        question,
        passage_tokens,
        spans: vec![span],
        answers: vec![],
    };
    ex.answers = vec![ex.span_text(span.0, span.1)];
    Ok(ex)
}
