use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{clip_global_norm, AdamState};
use super::checkpoint::Checkpoint;
use crate::conductor::{ModelAssembly, Prepared};
use crate::config::TrainConfig;
use crate::params::{Mode, ParamId};
use crate::squad::{evaluate, EvalReport, QAExample};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,train_loss,dev_em,dev_f1,lr";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_em: f64,
    pub dev_f1: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    /// Only computed when a train EM target is set and any dev EM target is met.
    pub train_em: Option<f64>,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.dev_em, self.dev_f1, self.lr
        )
    }
}

pub fn metrics_csv(log: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in log {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

/// An example ready for training: features plus its first gold span.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub features: Prepared,
    pub gold: (usize, usize),
}

pub fn prepare_training(model: &ModelAssembly, examples: &[QAExample]) -> Result<Vec<TrainItem>> {
    examples
        .iter()
        .map(|ex| {
            let gold = ex
                .gold_span()
                .ok_or_else(|| Error::Contract(format!("training example {} has no gold span", ex.id)))?;
            Ok(TrainItem {
                features: model.prepare(ex)?,
                gold,
            })
        })
        .collect()
}

/// Seed of the dropout stream for one example of one optimizer step.
fn dropout_seed(seed: u64, step: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ step.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (k as u64).wrapping_mul(0x94D0_49BB_1331_11EB)
}

/// Mean loss over `batch`, its averaged gradients, clipped to `clip_norm`,
/// and one Adam update. Returns the mean loss. Nothing is modified when the
/// loss or any gradient is non-finite.
pub fn train_step(
    model: &mut ModelAssembly,
    adam: &mut AdamState,
    batch: &[&TrainItem],
    clip_norm: f64,
    seed: u64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut total = 0.0;
    let mut acc: Vec<Option<Tensor>> = vec![None; model.params.len()];
    for (k, item) in batch.iter().enumerate() {
        let mut s = model.session(Mode::Train, dropout_seed(seed, adam.step, k));
        let loss = model.loss(&mut s, &item.features, item.gold)?;
        let l = s.graph.value(loss).item();
        if !l.is_finite() {
            return Err(Error::Tensor(crate::tensor::TensorError::NonFinite {
                context: "training loss".into(),
            }));
        }
        total += l;
        s.graph.backward(loss)?;
        for (id, g) in s.param_grads() {
            match &mut acc[id.index()] {
                Some(a) => a.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads: Vec<(ParamId, Tensor)> = acc
        .into_iter()
        .enumerate()
        .filter_map(|(i, g)| g.map(|g| (ParamId(i), g.map(|x| x * scale))))
        .collect();
    clip_global_norm(&mut grads, clip_norm);
    adam.step(&mut model.params, &grads)?;
    Ok(total * scale)
}

/// Predicted answer text for every example, keyed by id.
pub fn predict_answers(model: &ModelAssembly, examples: &[QAExample]) -> Result<HashMap<String, String>> {
    examples
        .iter()
        .map(|ex| {
            let p = model.predict(&model.prepare(ex)?)?;
            Ok((ex.id.clone(), ex.span_text(p.span.start, p.span.end)))
        })
        .collect()
}

pub fn evaluate_model(model: &ModelAssembly, examples: &[QAExample]) -> Result<EvalReport> {
    let preds = predict_answers(model, examples)?;
    Ok(evaluate(&preds, examples, true)?)
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Model holding the best-dev parameters.
    pub model: ModelAssembly,
    pub best: Checkpoint,
    pub log: Vec<EpochMetrics>,
    /// Why training stopped before the configured number of epochs, if it did.
    pub halted: Option<String>,
}

/// Where a run writes its checkpoints and metric log.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
}

impl RunOutput {
    pub fn best_checkpoint(&self) -> PathBuf {
        self.dir.join("best.ckpt.json")
    }

    pub fn last_checkpoint(&self) -> PathBuf {
        self.dir.join("last.ckpt.json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
}

struct MetricWriter(Option<BufWriter<File>>);

impl MetricWriter {
    fn open(out: Option<&RunOutput>) -> Result<Self> {
        let Some(o) = out else { return Ok(Self(None)) };
        let mut w = BufWriter::new(File::create(o.metrics())?);
        writeln!(w, "{METRICS_HEADER}")?;
        w.flush()?;
        Ok(Self(Some(w)))
    }

    fn push(&mut self, m: &EpochMetrics) -> Result<()> {
        if let Some(w) = &mut self.0 {
            writeln!(w, "{}", m.csv_row())?;
            w.flush()?;
        }
        Ok(())
    }
}

fn save_to(c: &Checkpoint, path: Option<PathBuf>) -> Result<()> {
    match path {
        Some(p) => c.save(&p),
        None => Ok(()),
    }
}

/// Runs the training loop: seeded shuffles, mini-batch Adam with clipping,
/// dev evaluation every epoch, learning-rate halving on epochs that do not
/// improve dev EM, and retention of the best-dev parameters.
pub fn train(
    mut model: ModelAssembly,
    train_set: &[QAExample],
    dev_set: &[QAExample],
    cfg: &TrainConfig,
    out: Option<&RunOutput>,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Config(
            "training needs non-empty train and dev sets".into(),
        ));
    }
    if cfg.batch_size == 0 || cfg.lr <= 0.0 || !cfg.lr.is_finite() {
        return Err(Error::Config("batch_size and lr must be positive".into()));
    }
    let items = prepare_training(&model, train_set)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.lr);
    let mut log = Vec::new();
    let mut lr_history = Vec::new();
    let mut best_em = f64::NEG_INFINITY;
    let mut best = Checkpoint::capture(&model, Some(&adam), 0, None, &lr_history);
    let mut writer = MetricWriter::open(out)?;
    let mut halted = None;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let lr = adam.lr;
        lr_history.push(lr);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainItem> = chunk.iter().map(|&i| &items[i]).collect();
            match train_step(&mut model, &mut adam, &batch, cfg.clip_norm, cfg.seed) {
                Ok(l) => loss_sum += l * batch.len() as f64,
                Err(
                    e @ (Error::NonFiniteGradient { .. }
                    | Error::Tensor(crate::tensor::TensorError::NonFinite { .. })),
                ) => {
                    log::error!("epoch {epoch}: {e}; stopping with the last good checkpoint");
                    halted = Some(e.to_string());
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let report = evaluate_model(&model, dev_set)?;
        let dev_ok = cfg.stop_at_dev_em.is_none_or(|t| report.em >= t);
        let train_em = match cfg.stop_at_train_em {
            Some(_) if dev_ok => Some(evaluate_model(&model, train_set)?.em),
            _ => None,
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / items.len() as f64,
            dev_em: report.em,
            dev_f1: report.f1,
            lr,
            train_em,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} dev EM {:.2} F1 {:.2} lr {lr:e}",
            m.train_loss,
            m.dev_em,
            m.dev_f1
        );
        writer.push(&m)?;
        log.push(m.clone());

        if m.dev_em > best_em {
            best_em = m.dev_em;
            best = Checkpoint::capture(&model, Some(&adam), epoch, Some(best_em), &lr_history);
            save_to(&best, out.map(RunOutput::best_checkpoint))?;
        } else if cfg.halve_on_bad_checkpoint {
            adam.lr /= 2.0;
            log::info!("dev EM did not improve; learning rate halved to {:e}", adam.lr);
        }
        let last = Checkpoint::capture(&model, Some(&adam), epoch, Some(best_em), &lr_history);
        save_to(&last, out.map(RunOutput::last_checkpoint))?;

        let train_ok = cfg
            .stop_at_train_em
            .is_none_or(|t| m.train_em.is_some_and(|e| e >= t));
        let targeted = cfg.stop_at_train_em.is_some() || cfg.stop_at_dev_em.is_some();
        if targeted && train_ok && dev_ok {
            log::info!("early-stopping targets reached at epoch {epoch}");
            break;
        }
    }
    best.restore(&mut model)?;
    Ok(TrainOutcome {
        model,
        best,
        log,
        halted,
    })
}

/// Writes a metric log as CSV.
pub fn write_metrics(path: &Path, log: &[EpochMetrics]) -> Result<()> {
    std::fs::write(path, metrics_csv(log))?;
    Ok(())
}
