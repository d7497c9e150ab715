//! Hyperparameters. Defaults: hidden size 128, dropout 0.2, Adam at 0.0006,
//! char CNN with 100 width-5 filters.

use serde::{Deserialize, Serialize};

pub const PHASECOND_PATH: &str = "LQ->LQ->Fo->LS->Fi->LS->Fi";
pub const ITERATIVE_ALIGNER_PATH: &str = "(LQ->Fi->LS->Fi)x2";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub word_dim: usize,
    pub use_char_cnn: bool,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_width: usize,
    pub use_exact_match: bool,
    pub use_pos: bool,
    pub use_ner: bool,
    pub use_question_type: bool,
    /// Width of the POS, NER and question-type embeddings.
    pub tag_dim: usize,
    /// Lowercase tokens before word-vector lookup.
    pub lowercase: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            word_dim: 100,
            use_char_cnn: true,
            char_dim: 16,
            char_filters: 100,
            char_width: 5,
            use_exact_match: true,
            use_pos: false,
            use_ner: false,
            use_question_type: true,
            tag_dim: 8,
            lowercase: true,
        }
    }
}

impl FeatureConfig {
    /// Width of one token's feature vector.
    pub fn width(&self) -> usize {
        let mut w = self.word_dim;
        if self.use_char_cnn {
            w += self.char_filters;
        }
        if self.use_exact_match {
            w += 1;
        }
        for on in [self.use_pos, self.use_ner, self.use_question_type] {
            if on {
                w += self.tag_dim;
            }
        }
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub path: String,
    /// LSTM hidden size `d`; encoder outputs are `2d` wide.
    pub hidden: usize,
    pub encoder_layers: usize,
    /// Number of highway layers in each outer fusion step.
    pub fusion_depth: usize,
    pub pointer_hops: usize,
    pub max_span: usize,
    pub mask_diagonal: bool,
    pub dropout: f64,
    pub features: FeatureConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            path: PHASECOND_PATH.to_string(),
            hidden: 128,
            encoder_layers: 1,
            fusion_depth: 2,
            pointer_hops: 2,
            max_span: 15,
            mask_diagonal: false,
            dropout: 0.2,
            features: FeatureConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Halve the learning rate whenever dev EM fails to improve on the best so far.
    pub halve_on_bad_checkpoint: bool,
    /// Stop early once both train-set and dev EM reach these values.
    pub stop_at_train_em: Option<f64>,
    pub stop_at_dev_em: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.0006,
            batch_size: 32,
            epochs: 30,
            clip_norm: 5.0,
            seed: 1,
            halve_on_bad_checkpoint: true,
            stop_at_train_em: None,
            stop_at_dev_em: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<String>,
    pub dev: Option<String>,
    /// Whitespace-separated word-vector file.
    pub vectors: Option<String>,
    pub train_vectors: bool,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}
