//! Question-passage dot-product attention.
//!
//! Each layer aligns the previous passage representation against the shared
//! question encoding `u^Q` and re-represents every passage word as a convex
//! combination of the independent question encoding `v^Q`. There are no
//! trainable parameters and no `1/sqrt(d)` scaling.

use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignmentKind {
    #[serde(rename = "qp")]
    QuestionPassage,
    #[serde(rename = "self")]
    SelfAttention,
}

impl AlignmentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::QuestionPassage => "qp",
            Self::SelfAttention => "self",
        }
    }
}

/// Alignment recorded on a graph: raw dot-product scores and their row softmax.
#[derive(Clone, Copy, Debug)]
pub struct Alignment {
    pub kind: AlignmentKind,
    /// 1-based index within its kind.
    pub layer_index: usize,
    pub scores: Var,
    pub weights: Var,
}

/// Detached copy of an [`Alignment`], for export and analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMatrix {
    pub kind: AlignmentKind,
    pub layer_index: usize,
    pub scores: Tensor,
    pub weights: Tensor,
}

impl Alignment {
    pub fn detach(&self, g: &Graph) -> AlignmentMatrix {
        AlignmentMatrix {
            kind: self.kind,
            layer_index: self.layer_index,
            scores: g.value(self.scores).clone(),
            weights: g.value(self.weights).clone(),
        }
    }
}

impl AlignmentMatrix {
    /// Mean Shannon entropy (nats) of the weight rows.
    pub fn mean_row_entropy(&self) -> f64 {
        let w = &self.weights;
        if w.rows() == 0 {
            return 0.0;
        }
        let total: f64 = (0..w.rows())
            .map(|r| {
                w.row(r)
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| -p * p.ln())
                    .sum::<f64>()
            })
            .sum();
        total / w.rows() as f64
    }

    /// Largest deviation of any row sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        let w = &self.weights;
        (0..w.rows())
            .map(|r| (w.row(r).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Expands a per-column mask to a full `[rows × cols]` softmax mask.
pub(crate) fn column_mask(mask: Option<&[bool]>, rows: usize, cols: usize) -> Result<Option<Vec<bool>>> {
    let Some(m) = mask else { return Ok(None) };
    if m.len() != cols {
        return Err(Error::Contract(format!(
            "mask has {} entries for {cols} columns",
            m.len()
        )));
    }
    Ok(Some((0..rows).flat_map(|_| m.iter().copied()).collect()))
}

/// `A(i, j) = softmax_j(h_i · u_j)`, shape `[n × m]`.
pub fn qp_align(
    g: &mut Graph,
    h_prev: Var,
    u_shared: Var,
    question_mask: Option<&[bool]>,
    layer_index: usize,
) -> Result<Alignment> {
    let (n, m) = (g.value(h_prev).rows(), g.value(u_shared).rows());
    let ut = g.transpose(u_shared)?;
    let scores = g.matmul(h_prev, ut)?;
    let mask = column_mask(question_mask, n, m)?;
    let weights = g.softmax_rows(scores, mask.as_deref())?;
    Ok(Alignment {
        kind: AlignmentKind::QuestionPassage,
        layer_index,
        scores,
        weights,
    })
}

/// `h_i = Σ_k A(i, k) v_k`
pub fn qp_represent(g: &mut Graph, alignment: &Alignment, v_independent: Var) -> Result<Var> {
    Ok(g.matmul(alignment.weights, v_independent)?)
}

/// Applies `layers` question-passage attention layers in sequence; every layer
/// uses the same `u^Q` and `v^Q`. Returns each layer's output and alignment.
pub fn qp_stack(
    g: &mut Graph,
    h0: Var,
    u_shared: Var,
    v_independent: Var,
    layers: usize,
    question_mask: Option<&[bool]>,
) -> Result<(Vec<Var>, Vec<Alignment>)> {
    if layers < 1 {
        return Err(Error::Config(
            "question-passage stack needs at least one layer".into(),
        ));
    }
    let mut outputs = Vec::with_capacity(layers);
    let mut alignments = Vec::with_capacity(layers);
    let mut h = h0;
    for t in 1..=layers {
        let a = qp_align(g, h, u_shared, question_mask, t)?;
        h = qp_represent(g, &a, v_independent)?;
        outputs.push(h);
        alignments.push(a);
    }
    Ok((outputs, alignments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, TensorError};

    fn m(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows)
    }

    #[test]
    fn single_question_word() {
        let mut g = Graph::new();
        let h = g.constant(m(&[vec![0.3, -2.0]]));
        let u = g.constant(m(&[vec![1.0, 5.0]]));
        let a = qp_align(&mut g, h, u, None, 1).unwrap();
        assert_eq!(g.value(a.weights).data(), &[1.0]);
    }

    #[test]
    fn two_word_alignment() {
        let mut g = Graph::new();
        let h = g.constant(m(&[vec![1.0, 0.0]]));
        let u = g.constant(m(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let a = qp_align(&mut g, h, u, None, 1).unwrap();
        let w = g.value(a.weights).data().to_vec();
        let e = std::f64::consts::E;
        assert!((w[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((w[0] - 0.73106).abs() < 1e-5 && (w[1] - 0.26894).abs() < 1e-5);
    }

    #[test]
    fn orthogonal_passage_gives_uniform_row() {
        let mut g = Graph::new();
        let h = g.constant(m(&[vec![0.0, 0.0, 1.0]]));
        let u = g.constant(m(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![2.0, -1.0, 0.0],
        ]));
        let a = qp_align(&mut g, h, u, None, 1).unwrap();
        for &w in g.value(a.weights).data() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let mut g = Graph::new();
        let h = g.constant(Tensor::zeros(&[2, 3]));
        let u = g.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(
            qp_align(&mut g, h, u, None, 1),
            Err(Error::Tensor(TensorError::Dimension { .. }))
        ));
    }

    #[test]
    fn represent_examples() {
        let mut g = Graph::new();
        let v = g.constant(m(&[vec![2.0, 0.0], vec![0.0, 2.0]]));
        let w = g.constant(m(&[vec![0.5, 0.5], vec![0.0, 1.0]]));
        let a = Alignment {
            kind: AlignmentKind::QuestionPassage,
            layer_index: 1,
            scores: w,
            weights: w,
        };
        let h = qp_represent(&mut g, &a, v).unwrap();
        assert_eq!(g.value(h).data(), &[1.0, 1.0, 0.0, 2.0]);
    }

    #[test]
    fn masked_question_columns_are_zero() {
        let mut g = Graph::new();
        let h = g.constant(m(&[vec![1.0, 2.0], vec![-1.0, 0.5]]));
        let u = g.constant(m(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![3.0, 3.0]]));
        let a = qp_align(&mut g, h, u, Some(&[true, true, false]), 1).unwrap();
        let w = g.value(a.weights);
        assert_eq!(w.get(0, 2), 0.0);
        assert_eq!(w.get(1, 2), 0.0);
    }

    #[test]
    fn stack_base_case_and_second_layer() {
        let mut g = Graph::new();
        let h0 = g.constant(m(&[vec![1.0, 0.0], vec![0.2, 0.4], vec![-1.0, 1.0]]));
        let u = g.constant(m(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let v = g.constant(m(&[vec![0.5, 2.0], vec![1.0, -1.0]]));
        let (outs, aligns) = qp_stack(&mut g, h0, u, v, 1, None).unwrap();
        let a = qp_align(&mut g, h0, u, None, 1).unwrap();
        let direct = qp_represent(&mut g, &a, v).unwrap();
        assert_eq!(g.value(outs[0]), g.value(direct));
        assert_eq!(aligns.len(), 1);

        let (outs, aligns) = qp_stack(&mut g, h0, u, v, 2, None).unwrap();
        let a2 = qp_align(&mut g, outs[0], u, None, 2).unwrap();
        assert_eq!(g.value(aligns[1].weights), g.value(a2.weights));
        assert_eq!(aligns[1].layer_index, 2);
        assert!(qp_stack(&mut g, h0, u, v, 0, None).is_err());
    }

    #[test]
    fn single_question_word_collapses_attention() {
        let mut g = Graph::new();
        let h0 = g.constant(m(&[vec![1.0, 0.0], vec![0.2, 0.4], vec![-1.0, 1.0]]));
        let u = g.constant(m(&[vec![1.0, 3.0]]));
        let v = g.constant(m(&[vec![0.5, 2.0]]));
        let (outs, _) = qp_stack(&mut g, h0, u, v, 2, None).unwrap();
        for o in outs {
            for r in 0..3 {
                assert_eq!(g.value(o).row(r), &[0.5, 2.0]);
            }
        }
    }

    #[test]
    fn gradient_through_align_and_represent() {
        let h = m(&[vec![0.1, -0.4], vec![0.7, 0.2], vec![-0.3, 0.9], vec![0.5, 0.5]]);
        let u = m(&[vec![0.3, -0.2], vec![0.8, 0.1], vec![-0.5, 0.6]]);
        let v = m(&[vec![1.0, -0.5], vec![0.2, 0.3], vec![-0.7, 0.4]]);
        let objective = |g: &mut Graph, h: Var, u: Var, v: Var| -> Result<Var> {
            let a = qp_align(g, h, u, None, 1)?;
            let out = qp_represent(g, &a, v)?;
            let sq = g.mul(out, out)?;
            Ok(g.sum(sq))
        };
        let (uc, vc, hc) = (u.clone(), v.clone(), h.clone());
        let e1 = grad_check(
            |g, x| {
                let (u, v) = (g.constant(uc.clone()), g.constant(vc.clone()));
                objective(g, x, u, v)
            },
            &h,
            1e-5,
        )
        .unwrap();
        let e2 = grad_check(
            |g, x| {
                let (h, v) = (g.constant(hc.clone()), g.constant(vc.clone()));
                objective(g, h, x, v)
            },
            &u,
            1e-5,
        )
        .unwrap();
        let e3 = grad_check(
            |g, x| {
                let (h, u) = (g.constant(hc.clone()), g.constant(uc.clone()));
                objective(g, h, u, x)
            },
            &v,
            1e-5,
        )
        .unwrap();
        assert!(e1.max(e2).max(e3) < 1e-4, "{e1} {e2} {e3}");
    }
}
