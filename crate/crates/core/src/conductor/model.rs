//! Model assembly: features, encoders, the path steps and the pointer head,
//! with every width fixed at build time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::path::{outer_block, parse_path, PhasePath, Step};
use crate::answer_pointer::{decode_span, span_loss, HopOutput, PointerHead, SpanPrediction};
use crate::config::{FeatureConfig, ModelConfig};
use crate::encoders::Encoders;
use crate::features::{FeatureEmbedder, SequenceFeatures, Side, VocabEmbedding, Vocabularies};
use crate::fusion::{InnerFusion, OuterFusion};
use crate::params::{xavier_uniform, Mode, ParamId, ParamStore, Session};
use crate::qp_attention::{qp_align, qp_represent, Alignment, AlignmentMatrix};
use crate::self_attention::{self_align, self_propagate};
use crate::squad::QAExample;
use crate::tensor::Var;
use crate::{Error, Result};

#[derive(Clone, Debug)]
enum Unit {
    Qp {
        layer: usize,
        projection: Option<ParamId>,
    },
    SelfAttn {
        layer: usize,
    },
    Inner(InnerFusion),
    Outer {
        fusion: OuterFusion,
        block: Vec<usize>,
    },
}

/// One example mapped to feature indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub passage: SequenceFeatures,
    pub question: SequenceFeatures,
}

/// Result of one forward pass, still attached to the session graph.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub hops: Vec<HopOutput>,
    pub trace: Vec<Alignment>,
}

impl ForwardOutput {
    pub fn start(&self) -> Var {
        self.hops.last().expect("at least one hop").start
    }

    pub fn end(&self) -> Var {
        self.hops.last().expect("at least one hop").end
    }
}

/// Detached eval-mode prediction.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub span: SpanPrediction,
    pub start_probs: Vec<f64>,
    pub end_probs: Vec<f64>,
    pub trace: Vec<AlignmentMatrix>,
}

#[derive(Clone, Debug)]
pub struct ModelAssembly {
    pub config: ModelConfig,
    pub path: PhasePath,
    pub vocabs: Vocabularies,
    pub params: ParamStore,
    embedder: FeatureEmbedder,
    encoders: Encoders,
    units: Vec<Unit>,
    widths: Vec<usize>,
    pointer: PointerHead,
}

/// Word, character and tag vocabularies seen in `examples`.
pub fn collect_vocabularies<'a>(
    examples: impl IntoIterator<Item = &'a QAExample>,
    cfg: &FeatureConfig,
) -> Vocabularies {
    let mut v = Vocabularies::default();
    for ex in examples {
        for t in ex.passage_tokens.iter().chain(&ex.question_tokens) {
            v.words.insert(Vocabularies::word_key(&t.text, cfg.lowercase));
            for c in t.text.chars() {
                v.chars.insert(c.to_string());
            }
        }
    }
    v
}

#[derive(Serialize)]
struct HashInput<'a> {
    path: String,
    hidden: usize,
    encoder_layers: usize,
    fusion_depth: usize,
    pointer_hops: usize,
    features: &'a FeatureConfig,
    words: usize,
    chars: usize,
    pos: usize,
    ner: usize,
}

impl ModelAssembly {
    /// Instantiates every step. Word rows come from `pretrained` when given
    /// and are otherwise drawn at random; words in `vocabs` without a
    /// pretrained vector get trainable random rows.
    pub fn build(
        config: &ModelConfig,
        vocabs: Vocabularies,
        pretrained: Option<VocabEmbedding>,
        seed: u64,
    ) -> Result<Self> {
        let path = parse_path(&config.path)?;
        if config.hidden == 0 || config.pointer_hops == 0 || config.max_span == 0 {
            return Err(Error::Config(
                "hidden, pointer_hops and max_span must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                config.dropout
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vocabs = vocabs;
        let have_pretrained = pretrained.is_some();
        let mut words = match pretrained {
            Some(w) => w,
            None => VocabEmbedding::random(config.features.word_dim, &mut rng),
        };
        let coverage = words.extend(vocabs.words.tokens()[2..].iter().map(String::as_str), &mut rng);
        if have_pretrained {
            log::info!(
                "word vectors cover {}/{} vocabulary types",
                coverage.found,
                coverage.total
            );
        }
        vocabs.words = words.vocab.clone();

        let mut params = ParamStore::new();
        let embedder = FeatureEmbedder::new(&mut params, &config.features, words, &vocabs, &mut rng)?;
        let d = config.hidden;
        let enc_width = 2 * d;
        let encoders = Encoders::new(
            &mut params,
            embedder.width(),
            d,
            config.encoder_layers.max(1),
            &mut rng,
        );

        let steps = path.steps().to_vec();
        let mut units = Vec::with_capacity(steps.len());
        let mut widths = Vec::with_capacity(steps.len());
        // Width feeding and leaving each attention step; a following Fi updates `out`.
        let mut attn_io: Vec<Option<(usize, usize)>> = vec![None; steps.len()];
        let (mut qp_count, mut self_count) = (0, 0);
        let mut w = enc_width;
        for (i, &step) in steps.iter().enumerate() {
            let label = format!("{i}:{step}");
            let unit = match step {
                Step::QpAttention => {
                    qp_count += 1;
                    let projection = (w != enc_width).then(|| {
                        params.add(
                            format!("path.{i}.projection"),
                            xavier_uniform(w, enc_width, &mut rng),
                        )
                    });
                    attn_io[i] = Some((w, enc_width));
                    w = enc_width;
                    Unit::Qp {
                        layer: qp_count,
                        projection,
                    }
                }
                Step::SelfAttention => {
                    self_count += 1;
                    attn_io[i] = Some((w, w));
                    Unit::SelfAttn { layer: self_count }
                }
                Step::InnerFusion => {
                    let (input, output) = attn_io[i - 1].expect("validated: Fi follows attention");
                    if input != output {
                        return Err(Error::Build {
                            step: label,
                            reason: format!(
                                "inner fusion needs equal widths but the attention step maps {input} to {output}"
                            ),
                        });
                    }
                    Unit::Inner(InnerFusion::new(
                        &mut params,
                        &format!("path.{i}.inner"),
                        w,
                        &mut rng,
                    ))
                }
                Step::OuterFusion => {
                    let block = outer_block(&steps, i);
                    w = block.iter().map(|&j| attn_io[j].expect("attention step").1).sum();
                    Unit::Outer {
                        fusion: OuterFusion::new(
                            &mut params,
                            &format!("path.{i}.outer"),
                            w,
                            config.fusion_depth,
                            &mut rng,
                        ),
                        block,
                    }
                }
            };
            units.push(unit);
            widths.push(w);
        }
        let pointer = PointerHead::new(&mut params, enc_width, w, d, config.pointer_hops, &mut rng)?;
        Ok(Self {
            config: ModelConfig {
                path: path.render(),
                ..config.clone()
            },
            path,
            vocabs,
            params,
            embedder,
            encoders,
            units,
            widths,
            pointer,
        })
    }

    /// Passage width after each path step.
    pub fn step_widths(&self) -> &[usize] {
        &self.widths
    }

    /// Width the pointer head reads.
    pub fn output_width(&self) -> usize {
        self.pointer.passage_width
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// SHA-256 over everything that fixes parameter shapes.
    pub fn config_hash(&self) -> String {
        let input = HashInput {
            path: self.path.render(),
            hidden: self.config.hidden,
            encoder_layers: self.config.encoder_layers,
            fusion_depth: self.config.fusion_depth,
            pointer_hops: self.config.pointer_hops,
            features: &self.config.features,
            words: self.vocabs.words.len(),
            chars: self.vocabs.chars.len(),
            pos: self.vocabs.pos.len(),
            ner: self.vocabs.ner.len(),
        };
        let json = serde_json::to_vec(&input).expect("serializable");
        hex::encode(Sha256::digest(&json))
    }

    pub fn prepare_tokens(&self, passage: &[String], question: &[String]) -> Result<Prepared> {
        if passage.is_empty() || question.is_empty() {
            return Err(Error::Contract("passage and question must be non-empty".into()));
        }
        let cfg = &self.config.features;
        Ok(Prepared {
            passage: self
                .vocabs
                .sequence(cfg, passage, question, Side::Passage, None, None)?,
            question: self
                .vocabs
                .sequence(cfg, question, passage, Side::Question, None, None)?,
        })
    }

    pub fn prepare(&self, example: &QAExample) -> Result<Prepared> {
        self.prepare_tokens(&example.passage_words(), &example.question_words())
    }

    pub fn session(&self, mode: Mode, seed: u64) -> Session<'_> {
        Session::new(&self.params, mode, self.config.dropout, seed)
    }

    pub fn forward(&self, s: &mut Session, ex: &Prepared) -> Result<ForwardOutput> {
        let p = self.embedder.embed_sequence(s, &ex.passage)?;
        let q = self.embedder.embed_sequence(s, &ex.question)?;
        let enc = self.encoders.encode(s, p, q)?;
        let (u, v) = (enc.question_shared, enc.question_independent);

        let mut h = enc.passage;
        let mut trace = Vec::new();
        let mut attn_input = h;
        let mut unit_out: Vec<Option<Var>> = vec![None; self.units.len()];
        for (i, unit) in self.units.iter().enumerate() {
            match unit {
                Unit::Qp { layer, projection } => {
                    attn_input = h;
                    let query = match projection {
                        Some(id) => {
                            let w = s.param(*id);
                            s.graph.matmul(h, w)?
                        }
                        None => h,
                    };
                    let a = qp_align(&mut s.graph, query, u, None, *layer)?;
                    h = qp_represent(&mut s.graph, &a, v)?;
                    trace.push(a);
                    unit_out[i] = Some(h);
                }
                Unit::SelfAttn { layer } => {
                    attn_input = h;
                    let a = self_align(&mut s.graph, h, None, self.config.mask_diagonal, *layer)?;
                    h = self_propagate(&mut s.graph, &a, h)?;
                    trace.push(a);
                    unit_out[i] = Some(h);
                }
                Unit::Inner(f) => {
                    h = f.forward(s, h, attn_input)?;
                    unit_out[i - 1] = Some(h);
                }
                Unit::Outer { fusion, block } => {
                    let parts: Vec<Var> = block
                        .iter()
                        .map(|&j| unit_out[j].expect("attention output"))
                        .collect();
                    let c = s.graph.concat_cols(&parts)?;
                    h = fusion.forward(s, c)?;
                    h = s.dropout(h)?;
                }
            }
        }
        let summary = self.pointer.question_summary(s, v)?;
        let hops = self.pointer.predict(s, h, summary, None)?;
        Ok(ForwardOutput { hops, trace })
    }

    /// Span loss of one example under gold span `(start, end)`.
    pub fn loss(&self, s: &mut Session, ex: &Prepared, gold: (usize, usize)) -> Result<Var> {
        let out = self.forward(s, ex)?;
        span_loss(s, &out.hops, gold.0, gold.1)
    }

    /// Eval-mode forward with the decoded span.
    pub fn predict(&self, ex: &Prepared) -> Result<Prediction> {
        let mut s = Session::eval(&self.params);
        let out = self.forward(&mut s, ex)?;
        let start_probs = s.graph.value(out.start()).data().to_vec();
        let end_probs = s.graph.value(out.end()).data().to_vec();
        let span = decode_span(&start_probs, &end_probs, self.config.max_span)?;
        let trace = out.trace.iter().map(|a| a.detach(&s.graph)).collect();
        Ok(Prediction {
            span,
            start_probs,
            end_probs,
            trace,
        })
    }
}
