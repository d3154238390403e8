use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pourbench::dataset::{run_and_log, sample_config, FeedbackSource, TrialLog, TrialSetup};
use pourbench::estimator::{
    evaluate_mse, train, AnalyticalFz, EstimatorKind, Scored, TrainConfig, TrainedModel, WeightEstimator,
};
use pourbench::Error;

/// Eight plate-feedback trials shared by every test in this file.
fn trials() -> &'static [TrialLog] {
    static TRIALS: OnceLock<Vec<TrialLog>> = OnceLock::new();
    TRIALS.get_or_init(|| {
        let setup = TrialSetup::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        (0..8)
            .map(|_| run_and_log(&setup, &sample_config(&mut rng), FeedbackSource::Plate).unwrap())
            .collect()
    })
}

fn short() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        batch_size: 500,
        lr_decay_every: 10,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_a_function_of_the_seed() {
    let (tr, va) = trials().split_at(6);
    let a = train(EstimatorKind::Proprioceptive, tr, va, &short(), 9).unwrap();
    let b = train(EstimatorKind::Proprioceptive, tr, va, &short(), 9).unwrap();
    assert_eq!(a.best, b.best);
    assert_eq!(a.curves, b.curves);
    let c = train(EstimatorKind::Proprioceptive, tr, va, &short(), 10).unwrap();
    assert_ne!(a.best.network, c.best.network);
}

#[test]
fn every_trainable_kind_learns_something() {
    let (tr, va) = trials().split_at(6);
    for kind in [EstimatorKind::Tactile, EstimatorKind::Proprioceptive, EstimatorKind::Multimodal] {
        let out = train(kind, tr, va, &short(), 1).unwrap();
        let c = &out.curves;
        assert_eq!(c.train.len(), 30);
        assert!(c.final_train < c.initial_train, "{kind}: {} -> {}", c.initial_train, c.final_train);
        assert!(c.val[c.best_epoch] <= c.val.iter().copied().fold(f64::INFINITY, f64::min));
    }
}

#[test]
fn model_files_round_trip_exactly() {
    let (tr, va) = trials().split_at(6);
    let model = train(EstimatorKind::Multimodal, tr, va, &short(), 2).unwrap().best;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = TrainedModel::load(&path).unwrap();
    assert_eq!(back, model);
    for f in &trials()[7].frames {
        let c = f.conditioned();
        assert_eq!(back.predict(&c).to_bits(), model.predict(&c).to_bits());
    }
}

#[test]
fn damaged_model_files_are_rejected() {
    let (tr, va) = trials().split_at(6);
    let text = train(EstimatorKind::Tactile, tr, va, &short(), 2).unwrap().best.to_json().unwrap();
    assert!(matches!(TrainedModel::from_json(&text[..text.len() / 2]), Err(Error::Format { .. })));
    let wrong = text.replace("\"input\": 10", "\"input\": 11");
    assert!(matches!(TrainedModel::from_json(&wrong), Err(Error::Shape { .. })));
}

#[test]
fn oracle_scores_zero_and_analytical_does_not() {
    let test = &trials()[6..];
    assert_eq!(evaluate_mse(Scored::Oracle, test).unwrap(), 0.0);
    assert!(evaluate_mse(Scored::Estimator(&AnalyticalFz), test).unwrap() > 0.0);
    assert!(matches!(evaluate_mse(Scored::Oracle, &[]), Err(Error::EmptySplit(_))));
}

#[test]
fn analytical_and_trained_models_cannot_be_mixed_up() {
    let (tr, va) = trials().split_at(6);
    assert!(matches!(
        train(EstimatorKind::AnalyticalFz, tr, va, &short(), 0),
        Err(Error::Argument(_))
    ));
    assert!(matches!(train(EstimatorKind::Tactile, tr, &[], &short(), 0), Err(Error::EmptySplit("val"))));
}
