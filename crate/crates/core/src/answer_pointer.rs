//! Multi-hop memory-based answer pointer.
//!
//! The memory starts as an attention-pooled summary of `v^Q`. Each hop scores
//! passage positions for the start with additive attention
//! `s_i = vᵀ tanh(W_h h_i + W_q q)`, reads the attended passage vector into the
//! memory through a GRU step, then does the same for the end. The last hop's
//! distributions are the prediction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::{xavier_uniform, ParamId, ParamStore, Session};
use crate::tensor::{Tensor, Var};
use crate::{Error, Result};

/// Lower bound applied to probabilities before taking logs in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Linear {
    fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            weight: store.add(format!("{name}.w"), xavier_uniform(input, output, rng)),
            bias: bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[output]))),
        }
    }

    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let y = s.graph.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = s.param(b);
                Ok(s.graph.add(y, b)?)
            }
            None => Ok(y),
        }
    }
}

/// Additive attention scorer for one boundary.
#[derive(Clone, Debug)]
struct BoundaryScorer {
    passage: Linear,
    query: Linear,
    out: ParamId,
}

impl BoundaryScorer {
    fn new(store: &mut ParamStore, name: &str, width: usize, attn: usize, rng: &mut impl Rng) -> Self {
        Self {
            passage: Linear::new(store, &format!("{name}.wh"), width, attn, false, rng),
            query: Linear::new(store, &format!("{name}.wq"), width, attn, true, rng),
            out: store.add(format!("{name}.v"), xavier_uniform(attn, 1, rng)),
        }
    }

    /// Masked distribution over passage positions, `[1 × n]`.
    fn distribution(&self, s: &mut Session, passage: Var, query: Var, mask: Option<&[bool]>) -> Result<Var> {
        let hp = self.passage.forward(s, passage)?;
        let hq = self.query.forward(s, query)?;
        let joint = s.graph.add(hp, hq)?;
        let joint = s.graph.tanh(joint);
        let v = s.param(self.out);
        let scores = s.graph.matmul(joint, v)?;
        let scores = s.graph.transpose(scores)?;
        Ok(s.graph.softmax_rows(scores, mask)?)
    }
}

/// GRU update of the pointer memory.
#[derive(Clone, Debug)]
struct GruCell {
    update_in: Linear,
    update_hid: Linear,
    reset_in: Linear,
    reset_hid: Linear,
    cand_in: Linear,
    cand_hid: Linear,
}

impl GruCell {
    fn new(store: &mut ParamStore, name: &str, width: usize, rng: &mut impl Rng) -> Self {
        let mut lin =
            |part: &str, bias: bool| Linear::new(store, &format!("{name}.{part}"), width, width, bias, rng);
        Self {
            update_in: lin("wz", true),
            update_hid: lin("uz", false),
            reset_in: lin("wr", true),
            reset_hid: lin("ur", false),
            cand_in: lin("wn", true),
            cand_hid: lin("un", false),
        }
    }

    fn step(&self, s: &mut Session, state: Var, input: Var) -> Result<Var> {
        let a = self.update_in.forward(s, input)?;
        let b = self.update_hid.forward(s, state)?;
        let z = s.graph.add(a, b)?;
        let z = s.graph.sigmoid(z);
        let a = self.reset_in.forward(s, input)?;
        let b = self.reset_hid.forward(s, state)?;
        let r = s.graph.add(a, b)?;
        let r = s.graph.sigmoid(r);
        let gated = s.graph.mul(r, state)?;
        let a = self.cand_in.forward(s, input)?;
        let b = self.cand_hid.forward(s, gated)?;
        let n = s.graph.add(a, b)?;
        let n = s.graph.tanh(n);
        let keep = s.graph.one_minus(z);
        let old = s.graph.mul(keep, state)?;
        let new = s.graph.mul(z, n)?;
        Ok(s.graph.add(old, new)?)
    }
}

#[derive(Clone, Debug)]
struct Hop {
    start: BoundaryScorer,
    end: BoundaryScorer,
}

/// Start and end distributions of one hop, each `[1 × n]`.
#[derive(Clone, Copy, Debug)]
pub struct HopOutput {
    pub start: Var,
    pub end: Var,
}

#[derive(Clone, Debug)]
pub struct PointerHead {
    summary_proj: Linear,
    summary_out: ParamId,
    adapter: Option<Linear>,
    hops: Vec<Hop>,
    memory: GruCell,
    pub question_width: usize,
    pub passage_width: usize,
}

impl PointerHead {
    pub fn new(
        store: &mut ParamStore,
        question_width: usize,
        passage_width: usize,
        attn: usize,
        hops: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if hops < 1 {
            return Err(Error::Config("pointer needs at least one hop".into()));
        }
        let summary_proj = Linear::new(store, "ptr.summary.w", question_width, attn, false, rng);
        let summary_out = store.add("ptr.summary.v", xavier_uniform(attn, 1, rng));
        let adapter = (question_width != passage_width)
            .then(|| Linear::new(store, "ptr.adapter", question_width, passage_width, true, rng));
        let hops = (0..hops)
            .map(|t| Hop {
                start: BoundaryScorer::new(store, &format!("ptr.hop{t}.start"), passage_width, attn, rng),
                end: BoundaryScorer::new(store, &format!("ptr.hop{t}.end"), passage_width, attn, rng),
            })
            .collect();
        let memory = GruCell::new(store, "ptr.memory", passage_width, rng);
        Ok(Self {
            summary_proj,
            summary_out,
            adapter,
            hops,
            memory,
            question_width,
            passage_width,
        })
    }

    pub fn hops(&self) -> usize {
        self.hops.len()
    }

    /// `Σ_j softmax_j(w · tanh(W v_j)) v_j`, `[1 × 2d]`.
    pub fn question_summary(&self, s: &mut Session, v_independent: Var) -> Result<Var> {
        if s.graph.value(v_independent).rows() == 0 {
            return Err(Error::Contract("question summary of an empty question".into()));
        }
        let proj = self.summary_proj.forward(s, v_independent)?;
        let proj = s.graph.tanh(proj);
        let w = s.param(self.summary_out);
        let scores = s.graph.matmul(proj, w)?;
        let scores = s.graph.transpose(scores)?;
        let weights = s.graph.softmax_rows(scores, None)?;
        Ok(s.graph.matmul(weights, v_independent)?)
    }

    /// Runs every hop. `mask` marks real (unpadded) passage positions.
    pub fn predict(
        &self,
        s: &mut Session,
        passage: Var,
        summary: Var,
        mask: Option<&[bool]>,
    ) -> Result<Vec<HopOutput>> {
        let n = s.graph.value(passage).rows();
        if n == 0 || mask.is_some_and(|m| !m.iter().any(|&b| b)) {
            return Err(Error::Contract("answer pointer over an empty passage".into()));
        }
        let mut memory = match &self.adapter {
            Some(a) => a.forward(s, summary)?,
            None => summary,
        };
        let mut out = Vec::with_capacity(self.hops.len());
        for hop in &self.hops {
            let start = hop.start.distribution(s, passage, memory, mask)?;
            let evidence = s.graph.matmul(start, passage)?;
            memory = self.memory.step(s, memory, evidence)?;
            let end = hop.end.distribution(s, passage, memory, mask)?;
            let evidence = s.graph.matmul(end, passage)?;
            memory = self.memory.step(s, memory, evidence)?;
            out.push(HopOutput { start, end });
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// Best `(start, end)` with `start <= end` and `end - start < max_span`,
/// maximizing `p_start[start] * p_end[end]`. Ties keep the earliest pair.
pub fn decode_span(p_start: &[f64], p_end: &[f64], max_span: usize) -> Result<SpanPrediction> {
    let n = p_start.len();
    if n == 0 || p_end.len() != n || max_span == 0 {
        return Err(Error::Contract(format!(
            "cannot decode span from {} start / {} end probabilities with max_span {max_span}",
            n,
            p_end.len()
        )));
    }
    let mut best = SpanPrediction {
        start: 0,
        end: 0,
        score: f64::NEG_INFINITY,
    };
    for (s, &ps) in p_start.iter().enumerate() {
        for (e, &pe) in p_end.iter().enumerate().take((s + max_span).min(n)).skip(s) {
            let score = ps * pe;
            if score > best.score {
                best = SpanPrediction {
                    start: s,
                    end: e,
                    score,
                };
            }
        }
    }
    Ok(best)
}

/// `-ln p_start[gold_start] - ln p_end[gold_end]` on the last hop, with
/// probabilities floored at [`PROB_FLOOR`].
pub fn span_loss(s: &mut Session, hops: &[HopOutput], gold_start: usize, gold_end: usize) -> Result<Var> {
    let last = hops
        .last()
        .ok_or_else(|| Error::Contract("span loss needs at least one hop".into()))?;
    let n = s.graph.value(last.start).numel();
    if gold_start >= n || gold_end >= n || gold_start > gold_end {
        return Err(Error::Contract(format!(
            "gold span ({gold_start}, {gold_end}) outside passage of {n} tokens"
        )));
    }
    let ps = s.graph.element(last.start, gold_start)?;
    let pe = s.graph.element(last.end, gold_end)?;
    let ls = s.graph.log_clamped(ps, PROB_FLOOR);
    let le = s.graph.log_clamped(pe, PROB_FLOOR);
    let total = s.graph.add(ls, le)?;
    Ok(s.graph.scale(total, -1.0))
}
