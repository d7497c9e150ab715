//! Passage self-attention: `S(i, j) = softmax_j(h_i · h_j)` and
//! `B_i = Σ_k S(i, k) h_k`. Used to propagate answer evidence across the passage.

use crate::qp_attention::{column_mask, Alignment, AlignmentKind};
use crate::tensor::{Graph, Var};
use crate::{Error, Result};

/// Self alignment `[n × n]`. Masked passage positions get zero weight as
/// columns; with `mask_diagonal`, a word may not attend to itself.
pub fn self_align(
    g: &mut Graph,
    h_prev: Var,
    passage_mask: Option<&[bool]>,
    mask_diagonal: bool,
    layer_index: usize,
) -> Result<Alignment> {
    let n = g.value(h_prev).rows();
    let ht = g.transpose(h_prev)?;
    let scores = g.matmul(h_prev, ht)?;
    let mut mask = column_mask(passage_mask, n, n)?;
    if mask_diagonal {
        let m = mask.get_or_insert_with(|| vec![true; n * n]);
        for i in 0..n {
            m[i * n + i] = false;
        }
    }
    let weights = g.softmax_rows(scores, mask.as_deref())?;
    Ok(Alignment {
        kind: AlignmentKind::SelfAttention,
        layer_index,
        scores,
        weights,
    })
}

pub fn self_propagate(g: &mut Graph, alignment: &Alignment, h_prev: Var) -> Result<Var> {
    let (sr, hr) = (g.value(alignment.weights).cols(), g.value(h_prev).rows());
    if sr != hr {
        return Err(Error::Contract(format!(
            "self alignment has {sr} columns but passage has {hr} rows"
        )));
    }
    Ok(g.matmul(alignment.weights, h_prev)?)
}
