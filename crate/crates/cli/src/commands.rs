use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::Args;
use phasecond::conductor::{collect_vocabularies, ModelAssembly, Prediction};
use phasecond::config::RunConfig;
use phasecond::features::{load_pretrained_vectors, Vocabularies};
use phasecond::gradsuite::run_grad_suite;
use phasecond::squad::{
    evaluate as score, generate_synthetic, load_dataset, tokenize, write_jsonl, LoadMode, QAExample,
    SyntheticSpec,
};
use phasecond::trainer::{self, Checkpoint, RunOutput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention;
use crate::settings::{self, Overrides};
use crate::Failure;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory for checkpoints, metrics.csv and config.toml.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// SQuAD JSON or JSON lines (.jsonl).
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for predictions.json and report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Input for commands that take either a dataset example or a raw text pair.
#[derive(Debug, Args)]
pub struct ExampleSource {
    /// SQuAD JSON or JSON lines (.jsonl).
    #[arg(long, conflicts_with_all = ["passage", "question"])]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "question")]
    pub passage: Option<String>,
    #[arg(long, requires = "passage")]
    pub question: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: ExampleSource,
    /// Write predictions as JSON here instead of printing them.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpAttentionArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: ExampleSource,
    /// Example id within `--data`; defaults to the first example.
    #[arg(long, requires = "data")]
    pub id: Option<String>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write scores and weights as CSV.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add a component with a deliberately wrong derivative.
    #[arg(long)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct SynthDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub examples: usize,
    #[arg(long, default_value_t = 50)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 20)]
    pub min_len: usize,
    #[arg(long, default_value_t = 30)]
    pub max_len: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn required(path: &Option<String>, what: &str) -> Result<PathBuf, Failure> {
    path.as_ref()
        .map(PathBuf::from)
        .ok_or_else(|| Failure::Usage(format!("no {what} dataset given (use --{what} or [data].{what})")))
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg: RunConfig = settings::load(args.config.as_deref())?;
    settings::apply(&mut cfg, &args.overrides);
    let train_path = required(&cfg.data.train, "train")?;
    let dev_path = required(&cfg.data.dev, "dev")?;
    std::fs::create_dir_all(&args.out)?;
    settings::echo(&args.out, &cfg)?;

    let train_set = load_dataset(&train_path, LoadMode::Train)?;
    let dev_set = load_dataset(&dev_path, LoadMode::Eval)?;
    log::info!("{} train and {} dev examples", train_set.len(), dev_set.len());
    let vocabs = collect_vocabularies(train_set.iter().chain(&dev_set), &cfg.model.features);
    let pretrained = match &cfg.data.vectors {
        Some(p) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            Some(
                load_pretrained_vectors(
                    Path::new(p),
                    cfg.model.features.word_dim,
                    cfg.data.train_vectors,
                    &mut rng,
                )
                .map_err(phasecond::Error::from)?,
            )
        }
        None => None,
    };
    let model = ModelAssembly::build(&cfg.model, vocabs, pretrained, cfg.train.seed)?;
    log::info!(
        "path {} with {} parameters, step widths {:?}",
        model.path.render(),
        model.param_count(),
        model.step_widths()
    );
    let out = RunOutput {
        dir: args.out.clone(),
    };
    let outcome = trainer::train(model, &train_set, &dev_set, &cfg.train, Some(&out))?;
    let best_epoch = outcome.best.epoch;
    let best_em = outcome.best.best_dev_em.unwrap_or(0.0);
    println!(
        "trained {} epochs; best dev EM {best_em:.2} at epoch {best_epoch}; outputs in {}",
        outcome.log.len(),
        args.out.display()
    );
    match outcome.halted {
        Some(reason) => Err(Failure::Runtime(format!("training halted: {reason}"))),
        None => Ok(()),
    }
}

fn load_checkpoint(path: &Path) -> Result<ModelAssembly, Failure> {
    let ckpt = Checkpoint::load(path)?;
    Ok(ckpt.build_model()?)
}

/// Rejects datasets that share no word with the checkpoint vocabulary.
fn check_compatible(model: &ModelAssembly, examples: &[QAExample]) -> Result<(), Failure> {
    if examples.is_empty() {
        return Err(Failure::Runtime("dataset has no questions".into()));
    }
    let lower = model.config.features.lowercase;
    let known = examples
        .iter()
        .flat_map(|ex| ex.passage_tokens.iter().chain(&ex.question_tokens))
        .any(|t| {
            model
                .vocabs
                .words
                .contains(&Vocabularies::word_key(&t.text, lower))
        });
    if known {
        Ok(())
    } else {
        Err(Failure::Runtime(
            "dataset and checkpoint do not match: no dataset token is in the checkpoint vocabulary".into(),
        ))
    }
}

fn predict_all(model: &ModelAssembly, examples: &[QAExample]) -> Result<Vec<(String, Prediction)>, Failure> {
    examples
        .iter()
        .map(|ex| {
            let p = model.predict(&model.prepare(ex)?)?;
            Ok((ex.span_text(p.span.start, p.span.end), p))
        })
        .collect()
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let model = load_checkpoint(&args.checkpoint)?;
    let examples = load_dataset(&args.data, LoadMode::Eval)?;
    check_compatible(&model, &examples)?;
    let answers: HashMap<String, String> = examples
        .iter()
        .zip(predict_all(&model, &examples)?)
        .map(|(ex, (text, _))| (ex.id.clone(), text))
        .collect();
    let report = score(&answers, &examples, true).map_err(phasecond::Error::from)?;
    println!(
        "EM {:.2} F1 {:.2} over {} questions",
        report.em, report.f1, report.count
    );
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("predictions.json"), &answers)?;
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn text_example(passage: &str, question: &str) -> QAExample {
    QAExample {
        id: "input".into(),
        passage: passage.to_string(),
        question: question.to_string(),
        passage_tokens: tokenize(passage),
        question_tokens: tokenize(question),
        spans: Vec::new(),
        answers: Vec::new(),
    }
}

fn examples_from(source: &ExampleSource) -> Result<Vec<QAExample>, Failure> {
    match (&source.data, &source.passage, &source.question) {
        (Some(path), _, _) => Ok(load_dataset(path, LoadMode::Eval)?),
        (None, Some(p), Some(q)) => {
            let ex = text_example(p, q);
            if ex.passage_tokens.is_empty() || ex.question_tokens.is_empty() {
                return Err(Failure::Usage("passage and question must contain tokens".into()));
            }
            Ok(vec![ex])
        }
        _ => Err(Failure::Usage(
            "give --data or both --passage and --question".into(),
        )),
    }
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    id: &'a str,
    answer: String,
    start: usize,
    end: usize,
    score: f64,
}

pub fn predict(args: PredictArgs) -> Result<(), Failure> {
    let model = load_checkpoint(&args.checkpoint)?;
    let examples = examples_from(&args.source)?;
    let preds = predict_all(&model, &examples)?;
    let records: Vec<PredictionRecord> = examples
        .iter()
        .zip(preds)
        .map(|(ex, (answer, p))| PredictionRecord {
            id: &ex.id,
            answer,
            start: p.span.start,
            end: p.span.end,
            score: p.span.score,
        })
        .collect();
    match &args.out {
        Some(path) => write_json(path, &records)?,
        None => {
            for r in &records {
                println!("{}", serde_json::to_string(r).expect("record serializes"));
            }
        }
    }
    Ok(())
}

pub fn dump_attention(args: DumpAttentionArgs) -> Result<(), Failure> {
    let model = load_checkpoint(&args.checkpoint)?;
    let examples = examples_from(&args.source)?;
    let ex = match &args.id {
        Some(id) => examples.iter().find(|e| &e.id == id).ok_or_else(|| {
            let ids: Vec<&str> = examples.iter().map(|e| e.id.as_str()).collect();
            Failure::Usage(format!(
                "unknown example id {id:?}; available ids: {}",
                ids.join(", ")
            ))
        })?,
        None => examples
            .first()
            .ok_or_else(|| Failure::Runtime("dataset has no questions".into()))?,
    };
    let prediction = model.predict(&model.prepare(ex)?)?;
    let passage = ex.passage_words();
    let question = ex.question_words();
    let exports = prediction
        .trace
        .iter()
        .map(|m| attention::export(m, &passage, &question))
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::Runtime)?;
    std::fs::create_dir_all(&args.out)?;
    let files = attention::write_all(&args.out, &exports, args.csv)?;
    println!(
        "wrote {} files for example {} to {}",
        files.len(),
        ex.id,
        args.out.display()
    );
    print!("{}", attention::entropy_report(&exports));
    Ok(())
}

pub fn grad_check(args: GradCheckArgs) -> Result<(), Failure> {
    let report = run_grad_suite(args.seed, args.inject_fault)?;
    print!("{}", report.render());
    if report.all_passed() {
        println!("all components pass");
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "gradient check failed for: {}",
            report.failures().join(", ")
        )))
    }
}

pub fn synth_data(args: SynthDataArgs) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        vocab_size: args.vocab_size,
        min_len: args.min_len,
        max_len: args.max_len,
        examples: args.examples,
        seed: args.seed,
    };
    let examples = generate_synthetic(&spec)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_jsonl(&args.out, &examples)?;
    println!("wrote {} examples to {}", examples.len(), args.out.display());
    Ok(())
}
