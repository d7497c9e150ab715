//! Finite-difference checks of every layer on small random fixtures.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::answer_pointer::{span_loss, PointerHead};
use crate::encoders::Encoders;
use crate::fusion::{InnerFusion, OuterFusion};
use crate::params::{param_grad_check, session_grad_check, uniform, ParamStore, Session};
use crate::qp_attention::qp_stack;
use crate::self_attention::{self_align, self_propagate};
use crate::tensor::{Tensor, Var, DEFAULT_EPSILON};
use crate::Result;

pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Passage length, question length and hidden size of the fixtures.
pub const FIXTURE_N: usize = 5;
pub const FIXTURE_M: usize = 4;
pub const FIXTURE_D: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub component: String,
    pub fixture: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradSuiteReport {
    pub seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradSuiteReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| !e.passed)
            .map(|e| e.component.as_str())
            .collect()
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "gradient check: seed {} epsilon {:e} tolerance {:e}\n",
            self.seed, self.epsilon, self.tolerance
        );
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{} {:<18} max rel err {:.3e}  [{}]",
                if e.passed { "PASS" } else { "FAIL" },
                e.component,
                e.max_rel_error,
                e.fixture
            );
        }
        s
    }
}

struct Fixture {
    rng: ChaCha8Rng,
}

impl Fixture {
    fn tensor(&mut self, rows: usize, cols: usize) -> Tensor {
        uniform(&[rows, cols], 1.0, &mut self.rng)
    }
}

/// `Σ x ∘ w` for a fixed random `w`, so every output entry gets a distinct weight.
fn project(s: &mut Session, x: Var, w: &Tensor) -> Result<Var> {
    let w = s.graph.constant(w.clone());
    let p = s.graph.mul(x, w)?;
    Ok(s.graph.sum(p))
}

/// Largest error over the given inputs and every parameter in `store`.
fn check_all<F>(store: &ParamStore, inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Session, &[Var]) -> Result<Var>,
{
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        let err = session_grad_check(store, &inputs[k], DEFAULT_EPSILON, |s, x| {
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| if j == k { x } else { s.graph.constant(t.clone()) })
                .collect();
            f(s, &vars)
        })?;
        worst = worst.max(err);
    }
    for id in store.ids() {
        let err = param_grad_check(store, id, DEFAULT_EPSILON, |s| {
            let vars: Vec<Var> = inputs.iter().map(|t| s.graph.constant(t.clone())).collect();
            f(s, &vars)
        })?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn entry(component: &str, fixture: String, err: f64) -> GradCheckEntry {
    GradCheckEntry {
        component: component.to_string(),
        fixture,
        max_rel_error: err,
        passed: err.is_finite() && err < GRAD_TOLERANCE,
    }
}

/// Runs every component check. With `negative_control`, also checks an
/// operation with a deliberately wrong derivative, which must fail.
pub fn run_grad_suite(seed: u64, negative_control: bool) -> Result<GradSuiteReport> {
    let (n, m, d) = (FIXTURE_N, FIXTURE_M, FIXTURE_D);
    let w2 = 2 * d;
    let mut fx = Fixture {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut entries = Vec::new();

    {
        let input = 4;
        let mut store = ParamStore::new();
        let enc = Encoders::new(&mut store, input, d, 1, &mut fx.rng);
        let (p, q) = (fx.tensor(n, input), fx.tensor(m, input));
        let (wh, wu, wv) = (fx.tensor(n, w2), fx.tensor(m, w2), fx.tensor(m, w2));
        let err = check_all(&store, &[p, q], |s, x| {
            let e = enc.encode(s, x[0], x[1])?;
            let a = project(s, e.passage, &wh)?;
            let b = project(s, e.question_shared, &wu)?;
            let c = project(s, e.question_independent, &wv)?;
            let ab = s.graph.add(a, b)?;
            Ok(s.graph.add(ab, c)?)
        })?;
        entries.push(entry("encoders", format!("n={n} m={m} input={input} d={d}"), err));
    }
    {
        let store = ParamStore::new();
        let (h, u, v) = (fx.tensor(n, w2), fx.tensor(m, w2), fx.tensor(m, w2));
        let w = fx.tensor(n, w2);
        let err = check_all(&store, &[h, u, v], |s, x| {
            let (outs, _) = qp_stack(&mut s.graph, x[0], x[1], x[2], 2, None)?;
            project(s, *outs.last().expect("two layers"), &w)
        })?;
        entries.push(entry(
            "qp_attention",
            format!("n={n} m={m} width={w2} layers=2"),
            err,
        ));
    }
    {
        let store = ParamStore::new();
        let h = fx.tensor(n, w2);
        let w = fx.tensor(n, w2);
        let mut err: f64 = 0.0;
        for diag in [false, true] {
            err = err.max(check_all(&store, std::slice::from_ref(&h), |s, x| {
                let a = self_align(&mut s.graph, x[0], None, diag, 1)?;
                let b = self_propagate(&mut s.graph, &a, x[0])?;
                project(s, b, &w)
            })?);
        }
        entries.push(entry(
            "self_attention",
            format!("n={n} width={w2} diagonal=both"),
            err,
        ));
    }
    {
        let width = 2 * w2;
        let mut store = ParamStore::new();
        let fusion = OuterFusion::new(&mut store, "outer", width, 2, &mut fx.rng);
        let c = fx.tensor(3, width);
        let w = fx.tensor(3, width);
        let err = check_all(&store, &[c], |s, x| {
            let y = fusion.forward(s, x[0])?;
            project(s, y, &w)
        })?;
        entries.push(entry("outer_fusion", format!("n=3 width={width} depth=2"), err));
    }
    {
        let width = 4;
        let mut store = ParamStore::new();
        let fusion = InnerFusion::new(&mut store, "inner", width, &mut fx.rng);
        let (b, prev) = (fx.tensor(3, width), fx.tensor(3, width));
        let w = fx.tensor(3, width);
        let err = check_all(&store, &[b, prev], |s, x| {
            let y = fusion.forward(s, x[0], x[1])?;
            project(s, y, &w)
        })?;
        entries.push(entry("inner_fusion", format!("n=3 width={width}"), err));
    }
    {
        let width = 4;
        let mut store = ParamStore::new();
        let head = PointerHead::new(&mut store, w2, width, d, 2, &mut fx.rng)?;
        let (p, v) = (fx.tensor(n, width), fx.tensor(m, w2));
        let (ws, we) = (fx.tensor(1, n), fx.tensor(1, n));
        let err = check_all(&store, &[p, v], |s, x| {
            let q = head.question_summary(s, x[1])?;
            let hops = head.predict(s, x[0], q, None)?;
            let mut total = s.graph.constant(Tensor::scalar(0.0));
            for h in hops {
                let a = project(s, h.start, &ws)?;
                let b = project(s, h.end, &we)?;
                total = s.graph.add(total, a)?;
                total = s.graph.add(total, b)?;
            }
            Ok(total)
        })?;
        entries.push(entry(
            "pointer_head",
            format!("n={n} m={m} width={width} hops=2"),
            err,
        ));
    }
    {
        let width = 4;
        let mut store = ParamStore::new();
        let head = PointerHead::new(&mut store, width, width, d, 2, &mut fx.rng)?;
        let (p, q) = (fx.tensor(n, width), fx.tensor(1, width));
        let err = check_all(&store, &[p, q], |s, x| {
            let hops = head.predict(s, x[0], x[1], None)?;
            span_loss(s, &hops, 1, 3)
        })?;
        entries.push(entry(
            "span_loss",
            format!("n={n} width={width} hops=2 gold=(1,3)"),
            err,
        ));
    }
    if negative_control {
        let store = ParamStore::new();
        let x = fx.tensor(n, w2);
        let err = check_all(&store, &[x], |s, x| {
            // tanh with the derivative of the identity.
            let y = s.graph.map(x[0], f64::tanh, |_| 1.0);
            let sq = s.graph.mul(y, y)?;
            Ok(s.graph.sum(sq))
        })?;
        entries.push(entry(
            "corrupted_tanh",
            format!("n={n} width={w2} (negative control)"),
            err,
        ));
    }
    Ok(GradSuiteReport {
        seed,
        epsilon: DEFAULT_EPSILON,
        tolerance: GRAD_TOLERANCE,
        entries,
    })
}
