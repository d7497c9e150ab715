use phasecond::answer_pointer::decode_span;
use phasecond::conductor::{parse_path, Step};
use phasecond::fusion::{InnerFusion, OuterFusion};
use phasecond::params::{ParamStore, Session};
use phasecond::qp_attention::{qp_align, qp_represent};
use phasecond::self_attention::{self_align, self_propagate};
use phasecond::tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ROW_SUM_TOL: f64 = 1e-9;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

/// A mask with at least `min_true` set entries.
fn mask(len: usize, min_true: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), len).prop_filter("enough unmasked", move |m| {
        m.iter().filter(|&&b| b).count() >= min_true
    })
}

fn check_rows(weights: &Tensor, allowed: impl Fn(usize, usize) -> bool) -> Result<(), TestCaseError> {
    for r in 0..weights.rows() {
        let row = weights.row(r);
        prop_assert!(
            (row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL,
            "row {r} = {row:?}"
        );
        for (c, &w) in row.iter().enumerate() {
            if !allowed(r, c) {
                prop_assert_eq!(w, 0.0, "masked entry ({}, {})", r, c);
            }
        }
    }
    Ok(())
}

/// Every output row lies within the per-coordinate bounds of the allowed value rows.
fn check_hull(
    out: &Tensor,
    values: &Tensor,
    allowed: impl Fn(usize, usize) -> bool,
) -> Result<(), TestCaseError> {
    for r in 0..out.rows() {
        for c in 0..out.cols() {
            let col: Vec<f64> = (0..values.rows())
                .filter(|&k| allowed(r, k))
                .map(|k| values.row(k)[c])
                .collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let x = out.row(r)[c];
            prop_assert!(
                x >= lo - 1e-12 && x <= hi + 1e-12,
                "({r}, {c}) = {x} outside [{lo}, {hi}]"
            );
        }
    }
    Ok(())
}

fn qp_case() -> impl Strategy<Value = (Tensor, Tensor, Tensor, Vec<bool>)> {
    (1usize..6, 1usize..5, 1usize..5, 1usize..4)
        .prop_flat_map(|(n, m, w, wv)| (matrix(n, w), matrix(m, w), matrix(m, wv), mask(m, 1)))
}

fn self_case() -> impl Strategy<Value = (Tensor, Vec<bool>, bool)> {
    (2usize..7, 1usize..5, any::<bool>())
        .prop_flat_map(|(n, w, diag)| (matrix(n, w), mask(n, if diag { 2 } else { 1 }), Just(diag)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn qp_rows_are_distributions_in_hull((h, u, v, m) in qp_case()) {
        let store = ParamStore::new();
        let mut s = Session::eval(&store);
        let (h, u, vv) = (s.graph.constant(h), s.graph.constant(u), s.graph.constant(v.clone()));
        let a = qp_align(&mut s.graph, h, u, Some(&m), 1).unwrap();
        let out = qp_represent(&mut s.graph, &a, vv).unwrap();
        let allowed = |_r: usize, c: usize| m[c];
        check_rows(s.graph.value(a.weights), allowed)?;
        check_hull(s.graph.value(out), &v, allowed)?;
    }

    #[test]
    fn self_rows_are_distributions_in_hull((h, m, diag) in self_case()) {
        let store = ParamStore::new();
        let mut s = Session::eval(&store);
        let hv = s.graph.constant(h.clone());
        let a = self_align(&mut s.graph, hv, Some(&m), diag, 1).unwrap();
        let out = self_propagate(&mut s.graph, &a, hv).unwrap();
        let allowed = |r: usize, c: usize| m[c] && !(diag && r == c);
        check_rows(s.graph.value(a.weights), allowed)?;
        check_hull(s.graph.value(out), &h, allowed)?;
    }

    #[test]
    fn self_attention_is_permutation_equivariant(h in matrix(4, 3), perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
        let store = ParamStore::new();
        let run = |t: Tensor| {
            let mut s = Session::eval(&store);
            let x = s.graph.constant(t);
            let a = self_align(&mut s.graph, x, None, false, 1).unwrap();
            let out = self_propagate(&mut s.graph, &a, x).unwrap();
            s.graph.value(out).clone()
        };
        let permuted = Tensor::from_rows(&perm.iter().map(|&i| h.row(i).to_vec()).collect::<Vec<_>>());
        let (base, moved) = (run(h), run(permuted));
        for (k, &i) in perm.iter().enumerate() {
            for (a, b) in moved.row(k).iter().zip(base.row(i)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fusion_outputs_interpolate(seed in any::<u64>(), n in 1usize..4, w in 1usize..5, bias in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let outer = OuterFusion::new(&mut store, "o", w, 2, &mut rng);
        let inner = InnerFusion::new(&mut store, "i", w, &mut rng);
        for l in &outer.layers {
            store.set_value(l.gate_bias, Tensor::full(&[w], bias));
        }
        store.set_value(inner.gate_bias, Tensor::full(&[w], bias));
        let x = phasecond::params::uniform(&[n, w], 2.0, &mut rng);
        let y = phasecond::params::uniform(&[n, w], 2.0, &mut rng);
        let mut s = Session::eval(&store);
        let (xv, yv) = (s.graph.constant(x), s.graph.constant(y));
        let mut traces = outer.forward_traced(&mut s, xv).unwrap();
        traces.push(inner.forward_traced(&mut s, xv, yv).unwrap());
        for t in traces {
            let (c, d, o) = (s.graph.value(t.carry), s.graph.value(t.candidate), s.graph.value(t.output));
            for ((&c, &d), &o) in c.data().iter().zip(d.data()).zip(o.data()) {
                prop_assert!(o >= c.min(d) - 1e-12 && o <= c.max(d) + 1e-12);
            }
        }
    }

    #[test]
    fn decode_matches_exhaustive_search(
        raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..25),
        max_span in prop::sample::select(vec![1usize, 5, 15]),
    ) {
        let (ps, pe): (Vec<f64>, Vec<f64>) = raw.into_iter().unzip();
        let got = decode_span(&ps, &pe, max_span).unwrap();
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (s, &a) in ps.iter().enumerate() {
            for (e, &b) in pe.iter().enumerate().skip(s).take(max_span) {
                if a * b > best.2 {
                    best = (s, e, a * b);
                }
            }
        }
        prop_assert_eq!((got.start, got.end), (best.0, best.1));
    }

    #[test]
    fn path_validity_matches_rules(steps in prop::collection::vec(prop::sample::select(Step::ALL.to_vec()), 1..9)) {
        let text = steps.iter().map(|s| s.token()).collect::<Vec<_>>().join("->");
        let expected = path_is_valid(&steps);
        match parse_path(&text) {
            Ok(p) => {
                prop_assert!(expected, "{text} accepted");
                prop_assert_eq!(p.steps(), steps.as_slice());
            }
            Err(e) => prop_assert!(!expected, "{text} rejected: {e}"),
        }
    }

    #[test]
    fn arbitrary_text_never_panics(text in "[LQSFio()x0-9 >-]{0,30}") {
        if let Ok(p) = parse_path(&text) {
            prop_assert_eq!(parse_path(&p.render()).unwrap(), p);
        }
    }
}

/// Validity written out directly from the path rules.
fn path_is_valid(steps: &[Step]) -> bool {
    let attention = |s: Step| matches!(s, Step::QpAttention | Step::SelfAttention);
    match steps.iter().copied().find(|&s| attention(s)) {
        Some(Step::QpAttention) => {}
        _ => return false,
    }
    steps.iter().enumerate().all(|(i, &s)| match s {
        Step::InnerFusion => i > 0 && attention(steps[i - 1]),
        Step::OuterFusion => {
            if i == 0 {
                return false;
            }
            let prev = steps[i - 1];
            if prev == Step::InnerFusion {
                i >= 2 && attention(steps[i - 2])
            } else {
                attention(prev)
            }
        }
        _ => true,
    })
}

#[test]
fn forced_gates_reproduce_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = 4;
    let mut store = ParamStore::new();
    let outer = OuterFusion::new(&mut store, "o", w, 1, &mut rng);
    let inner = InnerFusion::new(&mut store, "i", w, &mut rng);
    let x = phasecond::params::uniform(&[3, w], 1.0, &mut rng);
    let y = phasecond::params::uniform(&[3, w], 1.0, &mut rng);
    for (bias, carry) in [(-40.0, true), (40.0, false)] {
        store.set_value(outer.layers[0].gate_bias, Tensor::full(&[w], bias));
        store.set_value(inner.gate_bias, Tensor::full(&[w], bias));
        let mut s = Session::eval(&store);
        let (xv, yv) = (s.graph.constant(x.clone()), s.graph.constant(y.clone()));
        let o = outer.forward_traced(&mut s, xv).unwrap()[0];
        let i = inner.forward_traced(&mut s, xv, yv).unwrap();
        for t in [o, i] {
            let target = if carry { t.carry } else { t.candidate };
            let diff = s.graph.value(t.output).max_abs_diff(s.graph.value(target));
            assert!(diff < 1e-6, "bias {bias}: deviation {diff}");
        }
    }
}
