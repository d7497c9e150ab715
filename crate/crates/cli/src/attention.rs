//! Attention matrix export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use phasecond::qp_attention::{AlignmentKind, AlignmentMatrix};
use serde::{Deserialize, Serialize};

/// Largest tolerated deviation of a weight row sum from one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// One exported layer: raw dot-product scores and their row softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub kind: String,
    pub layer_index: usize,
    pub row_tokens: Vec<String>,
    pub col_tokens: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub mean_row_entropy: f64,
}

fn rows(t: &phasecond::tensor::Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn export(
    m: &AlignmentMatrix,
    passage: &[String],
    question: &[String],
) -> Result<AttentionExport, String> {
    let err = m.max_row_sum_error();
    if err > ROW_SUM_TOLERANCE {
        return Err(format!(
            "{} layer {} has a weight row summing to 1 ± {err:e}",
            m.kind.as_str(),
            m.layer_index
        ));
    }
    let cols = match m.kind {
        AlignmentKind::QuestionPassage => question,
        AlignmentKind::SelfAttention => passage,
    };
    Ok(AttentionExport {
        kind: m.kind.as_str().to_string(),
        layer_index: m.layer_index,
        row_tokens: passage.to_vec(),
        col_tokens: cols.to_vec(),
        scores: rows(&m.scores),
        weights: rows(&m.weights),
        mean_row_entropy: m.mean_row_entropy(),
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn matrix_csv(e: &AttentionExport, values: &[Vec<f64>]) -> String {
    let mut out = String::from("token");
    for c in &e.col_tokens {
        out.push(',');
        out.push_str(&csv_field(c));
    }
    out.push('\n');
    for (tok, row) in e.row_tokens.iter().zip(values) {
        out.push_str(&csv_field(tok));
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Writes `NN_<kind><layer>.json` per matrix, plus score and weight CSVs when asked.
pub fn write_all(dir: &Path, exports: &[AttentionExport], csv: bool) -> std::io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (i, e) in exports.iter().enumerate() {
        let stem = format!("{:02}_{}{}", i + 1, e.kind, e.layer_index);
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_string_pretty(e).expect("export serializes"))?;
        written.push(json);
        if csv {
            for (suffix, values) in [("scores", &e.scores), ("weights", &e.weights)] {
                let p = dir.join(format!("{stem}_{suffix}.csv"));
                std::fs::write(&p, matrix_csv(e, values))?;
                written.push(p);
            }
        }
    }
    Ok(written)
}

/// Mean row entropy per layer, and whether the second self-attention layer
/// is sharper (lower entropy) than the first.
pub fn entropy_report(exports: &[AttentionExport]) -> String {
    let mut s = String::new();
    for e in exports {
        let _ = writeln!(
            s,
            "{} layer {}: mean row entropy {:.4} nats",
            e.kind, e.layer_index, e.mean_row_entropy
        );
    }
    let self_layers: Vec<&AttentionExport> = exports.iter().filter(|e| e.kind == "self").collect();
    if let [first, second, ..] = self_layers.as_slice() {
        let verdict = if second.mean_row_entropy < first.mean_row_entropy {
            "sharper than"
        } else {
            "not sharper than"
        };
        let _ = writeln!(
            s,
            "self-attention layer 2 is {verdict} layer 1 ({:.4} vs {:.4} nats)",
            second.mean_row_entropy, first.mean_row_entropy
        );
    }
    s
}
