//! Trainer invariants on the synthetic benchmark.

use clipdiv::dataio::synth_generate;
use clipdiv::numerics::Rng;
use clipdiv::{train, LossWeights, Mat, SynthConfig, TrainingConfig};

fn small_benchmark(seed: u64) -> clipdiv::dataio::SynthOutput {
    synth_generate(&SynthConfig {
        n_per_domain: 200,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn abs_only_run_reduces_abs_over_five_epoch_windows() {
    let data = synth_generate(&SynthConfig::default()).unwrap();
    let cfg = TrainingConfig {
        weights: LossWeights::new(10.0, 0.0, 0.0).unwrap(),
        epochs: 20,
        seed: 1,
        ..TrainingConfig::default()
    };
    let (_, metrics) = train(&data.source, &data.target, &data.bank, &cfg).unwrap();
    let abs: Vec<f64> = metrics.epochs.iter().map(|e| e.losses.abs_total).collect();
    let windows: Vec<f64> = abs.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    let violations = windows.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(violations <= 1, "window means {windows:?}");
}

#[test]
fn schedule_progress_is_monotone_and_records_are_per_epoch() {
    let data = small_benchmark(2);
    let cfg = TrainingConfig {
        epochs: 4,
        ..TrainingConfig::default()
    };
    let (_, metrics) = train(&data.source, &data.target, &data.bank, &cfg).unwrap();
    assert_eq!(metrics.epochs.len(), 4);
    assert_eq!(metrics.wall_time_secs.len(), 4);
    assert_eq!(metrics.to_jsonl().lines().count(), 4);

    let thetas: Vec<f64> = metrics.steps.iter().map(|s| s.schedule.theta).collect();
    let total = thetas.len() as f64;
    assert_eq!(thetas[0], 0.0);
    assert!(thetas.windows(2).all(|w| w[1] > w[0]));
    assert!((thetas.last().unwrap() - (total - 1.0) / total).abs() < 1e-15);
    for (i, s) in metrics.steps.iter().enumerate() {
        assert_eq!(s.step, i);
        let eta = 0.01 / (1.0 + 10.0 * s.schedule.theta).powf(0.75);
        assert!((s.schedule.eta_theta - eta).abs() < 1e-15);
    }
    let last = metrics.epochs.last().unwrap();
    assert!(last.lr_extractor < 2e-3 && last.lr_classifier < 2e-2);
    assert!((last.lr_classifier / last.lr_extractor - 10.0).abs() < 1e-12);
}

#[test]
fn zero_weights_ignore_the_target_domain() {
    let data = small_benchmark(3);
    let cfg = TrainingConfig {
        weights: LossWeights::source_only(),
        epochs: 3,
        ..TrainingConfig::default()
    };
    let (model, metrics) = train(&data.source, &data.target, &data.bank, &cfg).unwrap();

    // Different target inputs of the same shape must not change anything learned.
    let mut other = data.target.clone();
    let mut rng = Rng::new(99);
    other.inputs = Mat::from_shape_simple_fn(other.inputs.dim(), || 5.0 * rng.normal());
    let (model2, metrics2) = train(&data.source, &other, &data.bank, &cfg).unwrap();
    assert_eq!(model.params_flat(), model2.params_flat());
    for (a, b) in metrics.steps.iter().zip(&metrics2.steps) {
        assert_eq!(a.losses.cls_source, b.losses.cls_source);
        assert_eq!(a.losses.total, a.losses.cls_source);
    }
}

#[test]
fn configuration_errors_precede_training() {
    let data = small_benchmark(4);
    let mut unlabeled = data.source.clone();
    unlabeled.labels = None;
    let cfg = TrainingConfig::default();
    assert!(matches!(
        train(&unlabeled, &data.target, &data.bank, &cfg),
        Err(clipdiv::Error::Config(_))
    ));

    let other = synth_generate(&SynthConfig {
        num_classes: 4,
        n_per_domain: 40,
        ..SynthConfig::default()
    })
    .unwrap();
    assert!(matches!(
        train(&data.source, &data.target, &other.bank, &cfg),
        Err(clipdiv::Error::Config(_))
    ));
    let zero_epochs = TrainingConfig {
        epochs: 0,
        ..TrainingConfig::default()
    };
    assert!(train(&data.source, &data.target, &data.bank, &zero_epochs).is_err());
}

#[test]
fn standard_benchmark_full_objective_beats_source_only() {
    let data = synth_generate(&SynthConfig::default()).unwrap();
    let run = |weights| {
        let cfg = TrainingConfig {
            weights,
            ..TrainingConfig::default()
        };
        let (_, metrics) = train(&data.source, &data.target, &data.bank, &cfg).unwrap();
        metrics.final_target_accuracy().unwrap()
    };
    let (source_only, full) = (run(LossWeights::source_only()), run(LossWeights::default()));
    assert!(source_only < full, "source-only {source_only}, full {full}");
}
