//! Token features: word vectors, a character CNN, exact-match bits and
//! optional tag / question-type embeddings, concatenated per token.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::FeatureConfig;
use crate::params::{uniform, xavier_uniform, ParamId, ParamStore, Session};
use crate::tensor::{Tensor, Var};
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";
/// Range of the uniform initializer for rows without a pretrained vector.
pub const RANDOM_INIT: f64 = 0.05;

#[derive(Debug, Error)]
pub enum VectorFileError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<VectorFileError> for Error {
    fn from(e: VectorFileError) -> Self {
        Error::Config(format!("vector file: {e}"))
    }
}

/// String-to-index map with reserved padding (0) and unknown (1) entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocabulary {
    /// Builds a vocabulary whose entries follow the reserved ones in first-seen order.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut v = Self {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        v.rebuild_index();
        for t in tokens {
            v.insert(t.into());
        }
        v
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.rebuild_index();
    }

    pub fn insert(&mut self, token: String) -> usize {
        if let Some(&i) = self.index.get(&token) {
            return i;
        }
        self.tokens.push(token.clone());
        self.index.insert(token, self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Word vocabulary with its embedding matrix and per-row trainability.
#[derive(Clone, Debug)]
pub struct VocabEmbedding {
    pub vocab: Vocabulary,
    pub matrix: Tensor,
    pub trainable: Vec<bool>,
}

/// How many vocabulary types were found in a pretrained vector file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coverage {
    pub found: usize,
    pub total: usize,
}

impl Coverage {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.found as f64 / self.total as f64
        }
    }
}

/// Reads a whitespace-separated `token v1 .. v_dim` file. Rows from the file
/// are frozen unless `trainable` is set; padding is a frozen zero row and the
/// unknown row is drawn uniformly.
pub fn load_pretrained_vectors(
    path: &Path,
    dim: usize,
    trainable: bool,
    rng: &mut impl Rng,
) -> std::result::Result<VocabEmbedding, VectorFileError> {
    let reader = BufReader::new(File::open(path)?);
    let mut tokens = Vec::new();
    let mut data = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line");
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(VectorFileError::Dimension {
                line: line_no,
                expected: dim,
                found: values.len(),
            });
        }
        for v in values {
            let x: f64 = v.parse().map_err(|_| VectorFileError::Parse {
                line: line_no,
                reason: format!("bad number {v:?}"),
            })?;
            data.push(x);
        }
        tokens.push(token.to_string());
    }
    if tokens.is_empty() {
        log::warn!("vector file {} is empty; all embeddings random", path.display());
    }
    let vocab = Vocabulary::from_tokens(tokens.iter().cloned());
    if vocab.len() != tokens.len() + 2 {
        log::warn!(
            "vector file {} repeats tokens; first occurrence kept",
            path.display()
        );
    }
    let mut matrix = Tensor::zeros(&[vocab.len(), dim]);
    let unk = uniform(&[dim], RANDOM_INIT, rng);
    matrix.data_mut()[UNK * dim..(UNK + 1) * dim].copy_from_slice(unk.data());
    let mut seen = vec![false; vocab.len()];
    for (k, t) in tokens.iter().enumerate() {
        let row = vocab.lookup(t);
        if seen[row] {
            continue;
        }
        seen[row] = true;
        matrix.data_mut()[row * dim..(row + 1) * dim].copy_from_slice(&data[k * dim..(k + 1) * dim]);
    }
    let mut flags = vec![trainable; vocab.len()];
    flags[PAD] = false;
    flags[UNK] = true;
    Ok(VocabEmbedding {
        vocab,
        matrix,
        trainable: flags,
    })
}

impl VocabEmbedding {
    /// Random embedding with no pretrained rows.
    pub fn random(dim: usize, rng: &mut impl Rng) -> Self {
        let vocab = Vocabulary::default();
        let mut matrix = Tensor::zeros(&[vocab.len(), dim]);
        let unk = uniform(&[dim], RANDOM_INIT, rng);
        matrix.data_mut()[dim..2 * dim].copy_from_slice(unk.data());
        Self {
            vocab,
            matrix,
            trainable: vec![false, true],
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Adds tokens missing from the vocabulary as trainable uniform rows and
    /// reports how many distinct tokens already had a vector.
    pub fn extend<'t>(&mut self, tokens: impl IntoIterator<Item = &'t str>, rng: &mut impl Rng) -> Coverage {
        let dim = self.dim();
        let mut seen = std::collections::HashSet::new();
        let mut cov = Coverage { found: 0, total: 0 };
        let mut data = std::mem::replace(&mut self.matrix, Tensor::zeros(&[0, dim])).into_data();
        for t in tokens {
            if !seen.insert(t.to_string()) {
                continue;
            }
            cov.total += 1;
            if self.vocab.contains(t) {
                cov.found += 1;
                continue;
            }
            self.vocab.insert(t.to_string());
            data.extend_from_slice(uniform(&[dim], RANDOM_INIT, rng).data());
            self.trainable.push(true);
        }
        self.matrix = Tensor::new(vec![self.vocab.len(), dim], data).expect("shape");
        cov
    }
}

/// Lowercased membership on the other side: bit `i` is set iff `tokens[i]`
/// occurs anywhere in `other`.
pub fn exact_match_features(tokens: &[String], other: &[String]) -> Vec<bool> {
    let set: std::collections::HashSet<String> = other.iter().map(|t| t.to_lowercase()).collect();
    tokens.iter().map(|t| set.contains(&t.to_lowercase())).collect()
}

/// Passage bits and question bits.
pub fn exact_match_pair(passage: &[String], question: &[String]) -> (Vec<bool>, Vec<bool>) {
    (
        exact_match_features(passage, question),
        exact_match_features(question, passage),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    What,
    How,
    Who,
    When,
    Which,
    Where,
    Why,
    Be,
    Other,
}

const BE_FORMS: &[&str] = &["be", "is", "are", "was", "were", "am", "been", "being"];

impl QuestionType {
    pub const COUNT: usize = 9;

    pub fn index(self) -> usize {
        self as usize
    }

    /// First interrogative (or form of "be") in the question, else `Other`.
    pub fn detect(question: &[String]) -> Self {
        for t in question {
            let t = t.to_lowercase();
            let ty = match t.as_str() {
                "what" => Self::What,
                "how" => Self::How,
                "who" => Self::Who,
                "when" => Self::When,
                "which" => Self::Which,
                "where" => Self::Where,
                "why" => Self::Why,
                s if BE_FORMS.contains(&s) => Self::Be,
                _ => continue,
            };
            return ty;
        }
        Self::Other
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Passage,
    Question,
}

/// Index-level input for one sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SequenceFeatures {
    pub words: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
    pub exact_match: Vec<bool>,
    pub pos: Option<Vec<usize>>,
    pub ner: Option<Vec<usize>>,
    pub question_type: Option<QuestionType>,
}

impl SequenceFeatures {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Lookup tables used to turn text into [`SequenceFeatures`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub words: Vocabulary,
    pub chars: Vocabulary,
    pub pos: Vocabulary,
    pub ner: Vocabulary,
}

impl Vocabularies {
    pub fn reindex(&mut self) {
        self.words.reindex();
        self.chars.reindex();
        self.pos.reindex();
        self.ner.reindex();
    }

    pub fn word_key(token: &str, lowercase: bool) -> String {
        if lowercase {
            token.to_lowercase()
        } else {
            token.to_string()
        }
    }

    /// Checks tag lengths and maps tokens to indices.
    pub fn sequence(
        &self,
        cfg: &FeatureConfig,
        tokens: &[String],
        other: &[String],
        side: Side,
        pos: Option<&[String]>,
        ner: Option<&[String]>,
    ) -> Result<SequenceFeatures> {
        for (name, tags) in [("pos", pos), ("ner", ner)] {
            if let Some(t) = tags {
                if t.len() != tokens.len() {
                    return Err(Error::Contract(format!(
                        "{name} tags have length {} but there are {} tokens",
                        t.len(),
                        tokens.len()
                    )));
                }
            }
        }
        let words = tokens
            .iter()
            .map(|t| self.words.lookup(&Self::word_key(t, cfg.lowercase)))
            .collect();
        let chars = tokens
            .iter()
            .map(|t| t.chars().map(|c| self.chars.lookup(&c.to_string())).collect())
            .collect();
        let map_tags = |v: &Vocabulary, tags: Option<&[String]>, on: bool| {
            if !on {
                return None;
            }
            Some(match tags {
                Some(t) => t.iter().map(|x| v.lookup(x)).collect(),
                None => vec![UNK; tokens.len()],
            })
        };
        Ok(SequenceFeatures {
            words,
            chars,
            exact_match: exact_match_features(tokens, other),
            pos: map_tags(&self.pos, pos, cfg.use_pos),
            ner: map_tags(&self.ner, ner, cfg.use_ner),
            question_type: match side {
                Side::Question if cfg.use_question_type => Some(QuestionType::detect(tokens)),
                _ => None,
            },
        })
    }
}

/// Convolution over character embeddings with max-pooling over positions.
#[derive(Clone, Debug)]
pub struct CharCnn {
    pub embedding: ParamId,
    pub filters: ParamId,
    pub bias: ParamId,
    pub width: usize,
    pub out_dim: usize,
}

impl CharCnn {
    pub fn new(
        store: &mut ParamStore,
        chars: usize,
        char_dim: usize,
        filters: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut emb = uniform(&[chars, char_dim], RANDOM_INIT, rng);
        emb.data_mut()[..char_dim].fill(0.0);
        let embedding = store.add("char.embedding", emb);
        let mut frozen = vec![false; chars];
        frozen[PAD] = true;
        store.get_mut(embedding).frozen_rows = Some(frozen);
        Self {
            embedding,
            filters: store.add("char.filters", xavier_uniform(width * char_dim, filters, rng)),
            bias: store.add("char.bias", Tensor::zeros(&[filters])),
            width,
            out_dim: filters,
        }
    }

    /// `[1 × out_dim]` encoding of one word (character indices). Words shorter
    /// than the filter width are right-padded with the zero padding character.
    pub fn encode_word(&self, s: &mut Session, chars: &[usize]) -> Result<Var> {
        let mut ids = chars.to_vec();
        if ids.len() < self.width {
            ids.resize(self.width, PAD);
        }
        let e = s.param_rows(self.embedding, &ids)?;
        let windows = s.graph.unfold_rows(e, self.width)?;
        let f = s.param(self.filters);
        let b = s.param(self.bias);
        let conv = s.graph.matmul(windows, f)?;
        let conv = s.graph.add(conv, b)?;
        let pooled = s.graph.max_over_rows(conv)?;
        Ok(s.graph.tanh(pooled))
    }

    pub fn encode(&self, s: &mut Session, words: &[Vec<usize>]) -> Result<Var> {
        if words.is_empty() {
            return Ok(s.graph.constant(Tensor::zeros(&[0, self.out_dim])));
        }
        let rows = words
            .iter()
            .map(|w| self.encode_word(s, w))
            .collect::<Result<Vec<_>>>()?;
        Ok(s.graph.concat_rows(&rows)?)
    }
}

/// Concatenates all enabled token features into one matrix per sequence.
#[derive(Clone, Debug)]
pub struct FeatureEmbedder {
    pub config: FeatureConfig,
    pub words: ParamId,
    pub chars: Option<CharCnn>,
    pub pos: Option<ParamId>,
    pub ner: Option<ParamId>,
    pub question_type: Option<ParamId>,
}

impl FeatureEmbedder {
    pub fn new(
        store: &mut ParamStore,
        config: &FeatureConfig,
        words: VocabEmbedding,
        vocabs: &Vocabularies,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if words.dim() != config.word_dim {
            return Err(Error::Config(format!(
                "word vectors have dimension {} but word_dim is {}",
                words.dim(),
                config.word_dim
            )));
        }
        let frozen: Vec<bool> = words.trainable.iter().map(|t| !t).collect();
        let word_id = store.add("word.embedding", words.matrix);
        store.get_mut(word_id).frozen_rows = Some(frozen);
        let chars = config.use_char_cnn.then(|| {
            CharCnn::new(
                store,
                vocabs.chars.len(),
                config.char_dim,
                config.char_filters,
                config.char_width,
                rng,
            )
        });
        let mut tag_table = |name: &str, rows: usize, rng: &mut _| {
            let mut t = uniform(&[rows, config.tag_dim], RANDOM_INIT, rng);
            t.data_mut()[..config.tag_dim].fill(0.0);
            let id = store.add(name, t);
            let mut frozen = vec![false; rows];
            frozen[PAD] = true;
            store.get_mut(id).frozen_rows = Some(frozen);
            id
        };
        let pos = config
            .use_pos
            .then(|| tag_table("pos.embedding", vocabs.pos.len(), rng));
        let ner = config
            .use_ner
            .then(|| tag_table("ner.embedding", vocabs.ner.len(), rng));
        let question_type = config.use_question_type.then(|| {
            store.add(
                "qtype.embedding",
                uniform(&[QuestionType::COUNT, config.tag_dim], RANDOM_INIT, rng),
            )
        });
        Ok(Self {
            config: config.clone(),
            words: word_id,
            chars,
            pos,
            ner,
            question_type,
        })
    }

    pub fn width(&self) -> usize {
        self.config.width()
    }

    /// `[len × width]` features for one sequence; dropout applies in training mode.
    pub fn embed_sequence(&self, s: &mut Session, seq: &SequenceFeatures) -> Result<Var> {
        let n = seq.len();
        if seq.chars.len() != n || (self.config.use_exact_match && seq.exact_match.len() != n) {
            return Err(Error::Contract(format!(
                "feature lengths disagree with {n} tokens"
            )));
        }
        let mut parts = vec![s.param_rows(self.words, &seq.words)?];
        if let Some(cnn) = &self.chars {
            parts.push(cnn.encode(s, &seq.chars)?);
        }
        if self.config.use_exact_match {
            let bits = seq
                .exact_match
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect();
            parts.push(s.graph.constant(Tensor::new(vec![n, 1], bits)?));
        }
        for (table, tags, name) in [(self.pos, &seq.pos, "pos"), (self.ner, &seq.ner, "ner")] {
            if let Some(id) = table {
                let tags = tags
                    .as_ref()
                    .ok_or_else(|| Error::Contract(format!("{name} tags required by configuration")))?;
                if tags.len() != n {
                    return Err(Error::Contract(format!(
                        "{name} tags length {} != {n}",
                        tags.len()
                    )));
                }
                parts.push(s.param_rows(id, tags)?);
            }
        }
        if let Some(id) = self.question_type {
            match seq.question_type {
                Some(ty) => parts.push(s.param_rows(id, &vec![ty.index(); n])?),
                // Passage tokens carry a zero slot so both sides share one width.
                None => parts.push(s.graph.constant(Tensor::zeros(&[n, self.config.tag_dim]))),
            }
        }
        let x = s.graph.concat_cols(&parts)?;
        Ok(s.dropout(x)?)
    }
}
