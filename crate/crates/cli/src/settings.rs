//! Run configuration: TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use phasecond::config::RunConfig;

use crate::Failure;

/// Flags that override values from `--config`.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Path expression, e.g. "LQ->LQ->Fo->LS->Fi->LS->Fi".
    #[arg(long)]
    pub path: Option<String>,
    /// LSTM hidden size d.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Highway layers per outer fusion step.
    #[arg(long)]
    pub fusion_depth: Option<usize>,
    #[arg(long)]
    pub pointer_hops: Option<usize>,
    #[arg(long)]
    pub max_span: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Forbid self-attention from attending to the same position.
    #[arg(long)]
    pub mask_diagonal: bool,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub char_filters: Option<usize>,
    #[arg(long)]
    pub no_char_cnn: bool,
    #[arg(long)]
    pub no_exact_match: bool,
    #[arg(long)]
    pub no_question_type: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep the learning rate fixed when dev EM stops improving.
    #[arg(long)]
    pub no_halving: bool,
    /// Stop once train EM reaches this value (and any dev target is met).
    #[arg(long)]
    pub stop_at_train_em: Option<f64>,
    /// Stop once dev EM reaches this value (and any train target is met).
    #[arg(long)]
    pub stop_at_dev_em: Option<f64>,
    /// Training data: SQuAD JSON or JSON lines (.jsonl).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Development data: SQuAD JSON or JSON lines (.jsonl).
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Word vectors, one `token v1 .. v_dim` line each.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
}

pub fn load(file: Option<&Path>) -> Result<RunConfig, Failure> {
    let Some(path) = file else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))
}

pub fn apply(cfg: &mut RunConfig, o: &Overrides) {
    let m = &mut cfg.model;
    let t = &mut cfg.train;
    let d = &mut cfg.data;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(m.path, o.path);
    set!(m.hidden, o.hidden);
    set!(m.fusion_depth, o.fusion_depth);
    set!(m.pointer_hops, o.pointer_hops);
    set!(m.max_span, o.max_span);
    set!(m.dropout, o.dropout);
    set!(m.features.word_dim, o.word_dim);
    set!(m.features.char_filters, o.char_filters);
    set!(t.lr, o.lr);
    set!(t.batch_size, o.batch_size);
    set!(t.epochs, o.epochs);
    set!(t.seed, o.seed);
    if o.mask_diagonal {
        m.mask_diagonal = true;
    }
    if o.no_char_cnn {
        m.features.use_char_cnn = false;
    }
    if o.no_exact_match {
        m.features.use_exact_match = false;
    }
    if o.no_question_type {
        m.features.use_question_type = false;
    }
    if o.no_halving {
        t.halve_on_bad_checkpoint = false;
    }
    if o.stop_at_train_em.is_some() {
        t.stop_at_train_em = o.stop_at_train_em;
    }
    if o.stop_at_dev_em.is_some() {
        t.stop_at_dev_em = o.stop_at_dev_em;
    }
    let path_str = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    if o.train.is_some() {
        d.train = path_str(&o.train);
    }
    if o.dev.is_some() {
        d.dev = path_str(&o.dev);
    }
    if o.vectors.is_some() {
        d.vectors = path_str(&o.vectors);
    }
}

pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string_pretty(cfg).expect("run config serializes to TOML")
}

/// Writes the effective configuration as `config.toml` in `dir`.
pub fn echo(dir: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    std::fs::write(dir.join("config.toml"), to_toml(cfg))?;
    Ok(())
}
