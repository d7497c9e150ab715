//! Bidirectional LSTM encoders.
//!
//! Two encoders run over the embedded tokens: an independent one over the
//! question only (`v^Q`, the attention values) and a shared one whose single
//! parameter set encodes both the passage (`h^P`) and the question (`u^Q`,
//! the attention keys).

use rand::Rng;

use crate::params::{orthogonal, xavier_uniform, ParamId, ParamStore, Session};
use crate::tensor::{Tensor, Var};
use crate::{Error, Result};

/// Gate layout inside the fused `4d` projections: input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_weights: ParamId,
    pub recurrent_weights: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let wx = xavier_uniform(input, 4 * hidden, rng);
        // Orthogonal block per gate.
        let blocks: Vec<Tensor> = (0..4).map(|_| orthogonal(hidden, rng)).collect();
        let mut wh = vec![0.0; hidden * 4 * hidden];
        for (g, b) in blocks.iter().enumerate() {
            for i in 0..hidden {
                for j in 0..hidden {
                    wh[i * 4 * hidden + g * hidden + j] = b.get(i, j);
                }
            }
        }
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        Self {
            input_weights: store.add(format!("{name}.wx"), wx),
            recurrent_weights: store.add(
                format!("{name}.wh"),
                Tensor::new(vec![hidden, 4 * hidden], wh).expect("shape"),
            ),
            bias: store.add(format!("{name}.b"), Tensor::vector(bias)),
            hidden,
        }
    }

    /// Runs over all rows of `x`, front to back or back to front. Returns
    /// hidden states in input order, `[n × hidden]`.
    pub fn run(&self, s: &mut Session, x: Var, reverse: bool) -> Result<Var> {
        let n = s.graph.value(x).rows();
        let d = self.hidden;
        let wx = s.param(self.input_weights);
        let wh = s.param(self.recurrent_weights);
        let b = s.param(self.bias);
        let projected = s.graph.matmul(x, wx)?;
        let projected = s.graph.add(projected, b)?;
        let mut h = s.graph.constant(Tensor::zeros(&[1, d]));
        let mut c = s.graph.constant(Tensor::zeros(&[1, d]));
        let mut states = vec![h; n];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..n).rev())
        } else {
            Box::new(0..n)
        };
        for t in order {
            let xt = s.graph.row(projected, t)?;
            let rec = s.graph.matmul(h, wh)?;
            let z = s.graph.add(xt, rec)?;
            let i = s.graph.slice_cols(z, 0, d)?;
            let f = s.graph.slice_cols(z, d, 2 * d)?;
            let g = s.graph.slice_cols(z, 2 * d, 3 * d)?;
            let o = s.graph.slice_cols(z, 3 * d, 4 * d)?;
            let i = s.graph.sigmoid(i);
            let f = s.graph.sigmoid(f);
            let g = s.graph.tanh(g);
            let o = s.graph.sigmoid(o);
            let keep = s.graph.mul(f, c)?;
            let write = s.graph.mul(i, g)?;
            c = s.graph.add(keep, write)?;
            let tc = s.graph.tanh(c);
            h = s.graph.mul(o, tc)?;
            states[t] = h;
        }
        Ok(s.graph.concat_rows(&states)?)
    }
}

/// Stack of bidirectional layers; each position's output is `[forward; backward]`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub layers: Vec<(LstmCell, LstmCell)>,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..layers.max(1))
            .map(|l| {
                let width = if l == 0 { input } else { 2 * hidden };
                (
                    LstmCell::new(store, &format!("{name}.l{l}.fwd"), width, hidden, rng),
                    LstmCell::new(store, &format!("{name}.l{l}.bwd"), width, hidden, rng),
                )
            })
            .collect();
        Self { layers, hidden }
    }

    pub fn output_width(&self) -> usize {
        2 * self.hidden
    }

    pub fn encode(&self, s: &mut Session, x: Var) -> Result<Var> {
        if s.graph.value(x).rows() == 0 {
            return Err(Error::Contract("cannot encode an empty sequence".into()));
        }
        let mut h = x;
        for (fwd, bwd) in &self.layers {
            let f = fwd.run(s, h, false)?;
            let b = bwd.run(s, h, true)?;
            h = s.graph.concat_cols(&[f, b])?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
pub struct Encoders {
    pub independent: BiLstm,
    pub shared: BiLstm,
}

/// Outputs of the encoding stage for one example.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `h^P`, `[n × 2d]`
    pub passage: Var,
    /// `u^Q`, `[m × 2d]`
    pub question_shared: Var,
    /// `v^Q`, `[m × 2d]`
    pub question_independent: Var,
}

impl Encoders {
    pub fn new(
        store: &mut ParamStore,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            independent: BiLstm::new(store, "enc.independent", input, hidden, layers, rng),
            shared: BiLstm::new(store, "enc.shared", input, hidden, layers, rng),
        }
    }

    pub fn encode_independent_question(&self, s: &mut Session, question: Var) -> Result<Var> {
        self.independent.encode(s, question)
    }

    /// Passage and question through the same parameters.
    pub fn encode_shared(&self, s: &mut Session, passage: Var, question: Var) -> Result<(Var, Var)> {
        let h = self.shared.encode(s, passage)?;
        let u = self.shared.encode(s, question)?;
        Ok((h, u))
    }

    pub fn encode(&self, s: &mut Session, passage: Var, question: Var) -> Result<Encoded> {
        let (h, u) = self.encode_shared(s, passage, question)?;
        let v = self.encode_independent_question(s, question)?;
        Ok(Encoded {
            passage: s.dropout(h)?,
            question_shared: s.dropout(u)?,
            question_independent: s.dropout(v)?,
        })
    }
}
