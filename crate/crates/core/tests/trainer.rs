use phasecond::conductor::{collect_vocabularies, ModelAssembly};
use phasecond::config::{FeatureConfig, ModelConfig, TrainConfig, ITERATIVE_ALIGNER_PATH};
use phasecond::squad::{generate_synthetic, QAExample, SyntheticSpec};
use phasecond::trainer::{
    prepare_training, train, train_step, AdamState, Checkpoint, CheckpointError, RunOutput, METRICS_HEADER,
};
use phasecond::Error;

fn small_config() -> ModelConfig {
    ModelConfig {
        hidden: 4,
        features: FeatureConfig {
            word_dim: 6,
            char_dim: 4,
            char_filters: 4,
            char_width: 3,
            ..FeatureConfig::default()
        },
        ..ModelConfig::default()
    }
}

fn data(examples: usize, seed: u64) -> Vec<QAExample> {
    generate_synthetic(&SyntheticSpec {
        examples,
        seed,
        min_len: 10,
        max_len: 14,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn build(cfg: &ModelConfig, examples: &[QAExample], seed: u64) -> ModelAssembly {
    ModelAssembly::build(cfg, collect_vocabularies(examples, &cfg.features), None, seed).unwrap()
}

fn quick_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn lr_halves_on_each_non_improving_epoch() {
    let train_set = data(8, 1);
    // Gold answers that never occur in the passage keep dev EM at 0 every epoch.
    let mut dev_set = data(4, 2);
    for ex in &mut dev_set {
        ex.answers = vec!["no such answer".into()];
    }
    let model = build(&small_config(), &train_set, 1);
    let dir = tempfile::tempdir().unwrap();
    let out = RunOutput {
        dir: dir.path().into(),
    };
    let outcome = train(model, &train_set, &dev_set, &quick_train(3), Some(&out)).unwrap();
    let lrs: Vec<f64> = outcome.log.iter().map(|m| m.lr).collect();
    assert_eq!(lrs, vec![0.0006, 0.0006, 0.0003]);
    let last = Checkpoint::load(&out.last_checkpoint()).unwrap();
    assert_eq!(last.adam.unwrap().lr, 0.00015);
    assert_eq!(outcome.best.epoch, 1);
}

#[test]
fn lr_schedule_follows_dev_em() {
    let train_set = data(16, 3);
    let dev_set = data(8, 4);
    let model = build(&small_config(), &train_set, 2);
    let cfg = TrainConfig {
        lr: 0.01,
        ..quick_train(5)
    };
    let outcome = train(model, &train_set, &dev_set, &cfg, None).unwrap();
    let mut best = f64::NEG_INFINITY;
    let mut lr = cfg.lr;
    for m in &outcome.log {
        assert_eq!(m.lr, lr, "epoch {}", m.epoch);
        if m.dev_em > best {
            best = m.dev_em;
        } else {
            lr /= 2.0;
        }
    }
    assert!(outcome.log.windows(2).all(|w| w[1].lr <= w[0].lr));
}

#[test]
fn single_example_overfits() {
    let example = generate_synthetic(&SyntheticSpec {
        examples: 1,
        seed: 11,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cfg = ModelConfig {
        hidden: 32,
        dropout: 0.0,
        features: FeatureConfig {
            word_dim: 50,
            char_filters: 50,
            ..FeatureConfig::default()
        },
        ..ModelConfig::default()
    };
    let mut model = build(&cfg, &example, 1);
    let items = prepare_training(&model, &example).unwrap();
    let mut adam = AdamState::new(0.0006);
    let mut losses = Vec::new();
    for _ in 0..200 {
        let l = train_step(&mut model, &mut adam, &[&items[0]], 5.0, 1).unwrap();
        assert!(l >= 0.0);
        losses.push(l);
        if l < 0.01 {
            break;
        }
    }
    let last = *losses.last().unwrap();
    assert!(last < 0.01, "loss after {} steps: {last}", losses.len());
    assert!(last < losses[0]);
}

#[test]
fn same_seed_same_metrics() {
    let train_set = data(12, 5);
    let dev_set = data(4, 6);
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = RunOutput {
            dir: dir.path().into(),
        };
        let model = build(&small_config(), &train_set, 9);
        train(model, &train_set, &dev_set, &quick_train(2), Some(&out)).unwrap();
        std::fs::read_to_string(out.metrics()).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.starts_with(METRICS_HEADER));
    assert_eq!(a.lines().count(), 3);
    assert_eq!(a, b);
}

#[test]
fn iterative_aligner_trains_under_same_settings() {
    let train_set = data(8, 7);
    let dev_set = data(4, 8);
    for path in ["LQ->LQ->Fo->LS->Fi->LS->Fi", ITERATIVE_ALIGNER_PATH] {
        let cfg = ModelConfig {
            path: path.into(),
            ..small_config()
        };
        let outcome = train(
            build(&cfg, &train_set, 1),
            &train_set,
            &dev_set,
            &quick_train(1),
            None,
        )
        .unwrap();
        assert!(outcome.log[0].train_loss.is_finite(), "{path}");
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let examples = data(3, 9);
    let model = build(&small_config(), &examples, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt.json");
    let adam = AdamState::new(0.001);
    Checkpoint::capture(&model, Some(&adam), 2, Some(40.0), &[0.001, 0.001])
        .save(&path)
        .unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.adam.as_ref(), Some(&adam));
    assert_eq!((loaded.epoch, loaded.best_dev_em), (2, Some(40.0)));
    let restored = loaded.build_model().unwrap();
    for ex in &examples {
        let a = model.predict(&model.prepare(ex).unwrap()).unwrap();
        let b = restored.predict(&restored.prepare(ex).unwrap()).unwrap();
        assert_eq!(a.start_probs, b.start_probs);
        assert_eq!(a.end_probs, b.end_probs);
    }
}

#[test]
fn truncated_checkpoint_is_an_integrity_error() {
    let examples = data(2, 10);
    let model = build(&small_config(), &examples, 4);
    let bytes = serde_json::to_vec(&Checkpoint::capture(&model, None, 0, None, &[])).unwrap();
    let cut = Checkpoint::from_bytes(&bytes[..bytes.len() / 2]);
    assert!(matches!(cut, Err(CheckpointError::Integrity(_))));
}

#[test]
fn tampered_parameters_fail_checksum() {
    let examples = data(2, 10);
    let model = build(&small_config(), &examples, 4);
    let mut ckpt = Checkpoint::capture(&model, None, 0, None, &[]);
    ckpt.params[0].tensor.data_mut()[0] += 1.0;
    let bytes = serde_json::to_vec(&ckpt).unwrap();
    assert!(matches!(
        Checkpoint::from_bytes(&bytes),
        Err(CheckpointError::Integrity(_))
    ));
}

#[test]
fn differently_shaped_model_names_parameter() {
    let examples = data(2, 11);
    let ckpt = Checkpoint::capture(&build(&small_config(), &examples, 1), None, 0, None, &[]);
    let wider = ModelConfig {
        hidden: 5,
        ..small_config()
    };
    let mut other = build(&wider, &examples, 1);
    match ckpt.restore(&mut other) {
        Err(CheckpointError::Shape {
            name,
            expected,
            found,
        }) => {
            assert!(!name.is_empty());
            assert_ne!(expected, found);
        }
        r => panic!("expected a shape error, got {r:?}"),
    }
}

#[test]
fn config_hash_mismatch_is_refused() {
    let examples = data(2, 12);
    let model = build(&small_config(), &examples, 1);
    let mut ckpt = Checkpoint::capture(&model, None, 0, None, &[]);
    ckpt.config_hash = "0".repeat(64);
    let mut target = build(&small_config(), &examples, 2);
    let before = target.params.clone();
    let err = ckpt.restore(&mut target).unwrap_err();
    assert!(matches!(err, CheckpointError::ConfigMismatch { .. }));
    assert!(err.to_string().contains("different model configuration"));
    assert_eq!(
        target
            .params
            .iter()
            .map(|(_, p)| p.value.clone())
            .collect::<Vec<_>>(),
        before.iter().map(|(_, p)| p.value.clone()).collect::<Vec<_>>()
    );
}

#[test]
fn empty_sets_are_config_errors() {
    let examples = data(2, 13);
    let model = build(&small_config(), &examples, 1);
    let r = train(model, &examples, &[], &quick_train(1), None);
    assert!(matches!(r, Err(Error::Config(_))));
}
