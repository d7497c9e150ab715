//! Gated fusion layers.
//!
//! Outer fusion is a stack of highway layers over the concatenated outputs of
//! an attention block:
//!
//! ```text
//! C~ = ReLU(C W_C + b_C)
//! z  = σ(C W_z + b_z)
//! C' = (1 - z) ∘ C + z ∘ C~
//! ```
//!
//! Inner fusion follows a single attention layer and gates between the
//! layer's input and a candidate built from `[B; B_prev; B ∘ B_prev]`.

use rand::Rng;

use crate::params::{xavier_uniform, ParamId, ParamStore, Session};
use crate::tensor::{Tensor, TensorError, Var};
use crate::Result;

/// Initial gate bias; negative values start training close to the carry path.
pub const GATE_BIAS_INIT: f64 = -1.0;

/// Intermediate values of one gated merge.
#[derive(Clone, Copy, Debug)]
pub struct GateTrace {
    pub carry: Var,
    pub candidate: Var,
    pub gate: Var,
    pub output: Var,
}

fn check_width(s: &Session, x: Var, width: usize, op: &'static str) -> Result<()> {
    let v = s.graph.value(x);
    if v.cols() != width {
        return Err(TensorError::Dimension {
            op,
            left: v.shape().to_vec(),
            right: vec![width],
        }
        .into());
    }
    Ok(())
}

/// `(1 - gate) ∘ carry + gate ∘ candidate`
fn gated_merge(s: &mut Session, carry: Var, candidate: Var, gate: Var) -> Result<Var> {
    let keep = s.graph.one_minus(gate);
    let a = s.graph.mul(keep, carry)?;
    let b = s.graph.mul(gate, candidate)?;
    Ok(s.graph.add(a, b)?)
}

#[derive(Clone, Debug)]
pub struct HighwayLayer {
    pub transform_weight: ParamId,
    pub transform_bias: ParamId,
    pub gate_weight: ParamId,
    pub gate_bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct OuterFusion {
    pub layers: Vec<HighwayLayer>,
    pub width: usize,
}

impl OuterFusion {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, depth: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..depth)
            .map(|t| HighwayLayer {
                transform_weight: store.add(format!("{name}.{t}.wc"), xavier_uniform(width, width, rng)),
                transform_bias: store.add(format!("{name}.{t}.bc"), Tensor::zeros(&[width])),
                gate_weight: store.add(format!("{name}.{t}.wz"), xavier_uniform(width, width, rng)),
                gate_bias: store.add(format!("{name}.{t}.bz"), Tensor::full(&[width], GATE_BIAS_INIT)),
            })
            .collect();
        Self { layers, width }
    }

    pub fn forward(&self, s: &mut Session, c0: Var) -> Result<Var> {
        Ok(self.forward_traced(s, c0)?.last().map_or(c0, |t| t.output))
    }

    /// One [`GateTrace`] per highway layer.
    pub fn forward_traced(&self, s: &mut Session, c0: Var) -> Result<Vec<GateTrace>> {
        check_width(s, c0, self.width, "outer_fuse")?;
        let mut c = c0;
        let mut trace = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let wc = s.param(layer.transform_weight);
            let bc = s.param(layer.transform_bias);
            let wz = s.param(layer.gate_weight);
            let bz = s.param(layer.gate_bias);
            let t = s.graph.matmul(c, wc)?;
            let t = s.graph.add(t, bc)?;
            let candidate = s.graph.relu(t);
            let z = s.graph.matmul(c, wz)?;
            let z = s.graph.add(z, bz)?;
            let gate = s.graph.sigmoid(z);
            let output = gated_merge(s, c, candidate, gate)?;
            trace.push(GateTrace {
                carry: c,
                candidate,
                gate,
                output,
            });
            c = output;
        }
        Ok(trace)
    }
}

#[derive(Clone, Debug)]
pub struct InnerFusion {
    pub candidate_weight: ParamId,
    pub candidate_bias: ParamId,
    pub gate_weight: ParamId,
    pub gate_bias: ParamId,
    pub width: usize,
}

impl InnerFusion {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, rng: &mut impl Rng) -> Self {
        Self {
            candidate_weight: store.add(format!("{name}.wb"), xavier_uniform(3 * width, width, rng)),
            candidate_bias: store.add(format!("{name}.bb"), Tensor::zeros(&[width])),
            gate_weight: store.add(format!("{name}.wf"), xavier_uniform(3 * width, width, rng)),
            gate_bias: store.add(format!("{name}.bf"), Tensor::full(&[width], GATE_BIAS_INIT)),
            width,
        }
    }

    /// Merges the attention output `b_new` with the layer input `b_prev`.
    pub fn forward(&self, s: &mut Session, b_new: Var, b_prev: Var) -> Result<Var> {
        Ok(self.forward_traced(s, b_new, b_prev)?.output)
    }

    pub fn forward_traced(&self, s: &mut Session, b_new: Var, b_prev: Var) -> Result<GateTrace> {
        check_width(s, b_new, self.width, "inner_fuse")?;
        check_width(s, b_prev, self.width, "inner_fuse")?;
        let prod = s.graph.mul(b_new, b_prev)?;
        let joined = s.graph.concat_cols(&[b_new, b_prev, prod])?;
        let wb = s.param(self.candidate_weight);
        let bb = s.param(self.candidate_bias);
        let wf = s.param(self.gate_weight);
        let bf = s.param(self.gate_bias);
        let t = s.graph.matmul(joined, wb)?;
        let t = s.graph.add(t, bb)?;
        let candidate = s.graph.tanh(t);
        let f = s.graph.matmul(joined, wf)?;
        let f = s.graph.add(f, bf)?;
        let gate = s.graph.sigmoid(f);
        let output = gated_merge(s, b_prev, candidate, gate)?;
        Ok(GateTrace {
            carry: b_prev,
            candidate,
            gate,
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{param_grad_check, session_grad_check, uniform};
    use crate::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        uniform(&[rows, cols], 1.0, &mut rng)
    }

    fn set_bias(store: &mut ParamStore, id: ParamId, v: f64) {
        let shape = store.value(id).shape().to_vec();
        store.set_value(id, Tensor::full(&shape, v));
    }

    #[test]
    fn outer_gate_closed_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let f = OuterFusion::new(&mut store, "fo", 6, 2, &mut rng);
        for l in &f.layers {
            let shape = store.value(l.gate_weight).shape().to_vec();
            store.set_value(l.gate_weight, Tensor::zeros(&shape));
            set_bias(&mut store, l.gate_bias, -50.0);
        }
        let mut s = Session::eval(&store);
        let x = s.graph.constant(random(3, 6, 2));
        let y = f.forward(&mut s, x).unwrap();
        assert!(s.graph.value(y).max_abs_diff(s.graph.value(x)) < 1e-6);
    }

    #[test]
    fn outer_gate_open_is_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let f = OuterFusion::new(&mut store, "fo", 6, 1, &mut rng);
        set_bias(&mut store, f.layers[0].gate_bias, 50.0);
        let shape = store.value(f.layers[0].gate_weight).shape().to_vec();
        store.set_value(f.layers[0].gate_weight, Tensor::zeros(&shape));
        let mut s = Session::eval(&store);
        let x = s.graph.constant(random(3, 6, 2));
        let tr = f.forward_traced(&mut s, x).unwrap();
        let diff = s
            .graph
            .value(tr[0].output)
            .max_abs_diff(s.graph.value(tr[0].candidate));
        assert!(diff < 1e-6);
        assert!(s.graph.value(tr[0].candidate).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn inner_gate_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let f = InnerFusion::new(&mut store, "fi", 4, &mut rng);
        let shape = store.value(f.gate_weight).shape().to_vec();
        store.set_value(f.gate_weight, Tensor::zeros(&shape));
        set_bias(&mut store, f.gate_bias, -50.0);
        let mut s = Session::eval(&store);
        let b = s.graph.constant(random(3, 4, 5));
        let p = s.graph.constant(random(3, 4, 6));
        let y = f.forward(&mut s, b, p).unwrap();
        assert!(s.graph.value(y).max_abs_diff(s.graph.value(p)) < 1e-6);

        set_bias(&mut store, f.gate_bias, 50.0);
        let mut s = Session::eval(&store);
        let b = s.graph.constant(random(3, 4, 5));
        let p = s.graph.constant(random(3, 4, 6));
        let tr = f.forward_traced(&mut s, b, p).unwrap();
        assert!(s.graph.value(tr.output).max_abs_diff(s.graph.value(tr.candidate)) < 1e-6);
        assert!(s.graph.value(tr.output).data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn width_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let fo = OuterFusion::new(&mut store, "fo", 4, 1, &mut rng);
        let fi = InnerFusion::new(&mut store, "fi", 4, &mut rng);
        let mut s = Session::eval(&store);
        let x = s.graph.constant(random(2, 5, 1));
        let y = s.graph.constant(random(2, 4, 1));
        assert!(matches!(
            fo.forward(&mut s, x),
            Err(Error::Tensor(TensorError::Dimension { .. }))
        ));
        assert!(fi.forward(&mut s, x, y).is_err());
    }

    #[test]
    fn outputs_interpolate_carry_and_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let fo = OuterFusion::new(&mut store, "fo", 5, 3, &mut rng);
        let fi = InnerFusion::new(&mut store, "fi", 5, &mut rng);
        let mut s = Session::eval(&store);
        let x = s.graph.constant(random(4, 5, 9));
        let p = s.graph.constant(random(4, 5, 10));
        let mut traces = fo.forward_traced(&mut s, x).unwrap();
        traces.push(fi.forward_traced(&mut s, x, p).unwrap());
        for t in traces {
            let (c, k, o) = (
                s.graph.value(t.carry),
                s.graph.value(t.candidate),
                s.graph.value(t.output),
            );
            for i in 0..o.numel() {
                let (lo, hi) = (c.data()[i].min(k.data()[i]), c.data()[i].max(k.data()[i]));
                assert!(o.data()[i] >= lo - 1e-12 && o.data()[i] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut store = ParamStore::new();
        let fo = OuterFusion::new(&mut store, "fo", 8, 2, &mut rng);
        let fi = InnerFusion::new(&mut store, "fi", 4, &mut rng);
        let x = random(3, 8, 13);
        let w = random(3, 8, 14);
        let objective = |s: &mut Session, y: Var, w: &Tensor| -> Result<Var> {
            let wv = s.graph.constant(w.clone());
            let p = s.graph.mul(y, wv)?;
            Ok(s.graph.sum(p))
        };
        let err = session_grad_check(&store, &x, 1e-5, |s, xv| {
            let y = fo.forward(s, xv)?;
            objective(s, y, &w)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
        for l in &fo.layers {
            for id in [l.transform_weight, l.transform_bias, l.gate_weight, l.gate_bias] {
                let err = param_grad_check(&store, id, 1e-5, |s| {
                    let xv = s.graph.constant(x.clone());
                    let y = fo.forward(s, xv)?;
                    objective(s, y, &w)
                })
                .unwrap();
                assert!(err < 1e-4, "{err}");
            }
        }

        let b = random(3, 4, 15);
        let p = random(3, 4, 16);
        let w = random(3, 4, 17);
        let err = session_grad_check(&store, &b, 1e-5, |s, bv| {
            let pv = s.graph.constant(p.clone());
            let y = fi.forward(s, bv, pv)?;
            objective(s, y, &w)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
        let err = session_grad_check(&store, &p, 1e-5, |s, pv| {
            let bv = s.graph.constant(b.clone());
            let y = fi.forward(s, bv, pv)?;
            objective(s, y, &w)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
