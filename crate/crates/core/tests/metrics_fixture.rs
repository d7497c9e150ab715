use std::collections::HashMap;

use phasecond::squad::{evaluate, exact_match, f1_score, generate_synthetic, QAExample, SyntheticSpec};

/// Hand-derived (prediction, gold, exact match, F1 in percent) cases.
#[derive(serde::Deserialize)]
struct Case {
    prediction: String,
    gold: String,
    em: bool,
    f1: f64,
}

fn cases() -> Vec<Case> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/metric_cases.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn hand_derived_fixture() {
    let cases = cases();
    assert_eq!(cases.len(), 20);
    for c in cases {
        let (pred, gold) = (&c.prediction, &c.gold);
        assert_eq!(exact_match(pred, gold), c.em, "EM of {pred:?} vs {gold:?}");
        let got = 100.0 * f1_score(pred, gold);
        assert!((got - c.f1).abs() < 0.01, "F1 of {pred:?} vs {gold:?}: {got}");
    }
}

fn example(id: &str, answers: &[&str]) -> QAExample {
    QAExample {
        id: id.into(),
        passage: String::new(),
        question: String::new(),
        passage_tokens: Vec::new(),
        question_tokens: Vec::new(),
        spans: Vec::new(),
        answers: answers.iter().map(|a| a.to_string()).collect(),
    }
}

#[test]
fn best_gold_answer_counts() {
    let examples = [
        example("q1", &["Denver Broncos", "Broncos"]),
        example("q2", &["Denver Broncos"]),
    ];
    let preds = HashMap::from([
        ("q1".to_string(), "Broncos".to_string()),
        ("q2".to_string(), "Broncos".to_string()),
    ]);
    let r = evaluate(&preds, &examples, true).unwrap();
    assert_eq!(r.em, 50.0);
    assert!((r.f1 - (100.0 + 66.667) / 2.0).abs() < 0.01);
    assert_eq!(r.questions.len(), 2);
    assert_eq!((r.questions[1].em, r.count), (0.0, 2));
}

#[test]
fn gold_as_prediction_scores_full_marks() {
    let examples = generate_synthetic(&SyntheticSpec {
        examples: 40,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let preds: HashMap<String, String> = examples
        .iter()
        .map(|e| (e.id.clone(), e.answers[0].clone()))
        .collect();
    let r = evaluate(&preds, &examples, true).unwrap();
    assert_eq!((r.em, r.f1), (100.0, 100.0));
}

#[test]
fn missing_predictions() {
    let examples = [example("q1", &["x"]), example("q2", &["y"])];
    let preds = HashMap::from([("q1".to_string(), "x".to_string())]);
    assert!(evaluate(&preds, &examples, true).is_err());
    let r = evaluate(&preds, &examples, false).unwrap();
    assert_eq!((r.em, r.missing), (50.0, 1));
}

#[test]
fn unanswerable_question_scored_against_empty() {
    let examples = [example("q1", &[])];
    let empty = HashMap::from([("q1".to_string(), String::new())]);
    assert_eq!(evaluate(&empty, &examples, true).unwrap().em, 100.0);
    let some = HashMap::from([("q1".to_string(), "text".to_string())]);
    assert_eq!(evaluate(&some, &examples, true).unwrap().f1, 0.0);
}
