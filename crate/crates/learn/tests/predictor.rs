use nailforce_core::calibration::Predictor;
use nailforce_core::TargetVector;
use nailforce_learn::gp::{GpConfig, GpMode, MultiGpConfig};
use nailforce_learn::neural::{CnnSpec, ConvLayerSpec, FdNetSpec, RnnSpec, TrainConfig};
use nailforce_learn::{ImageShape, LabeledSequence, PredictorConfig, PredictorModel, Standardizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPE: ImageShape = ImageShape {
    height: 8,
    width: 8,
    channels: 1,
};

fn dataset(seed: u64, trials: usize, frames: usize) -> Vec<LabeledSequence> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let mut features = Vec::new();
            let mut targets = Vec::new();
            for _ in 0..frames {
                let a: f64 = r.random_range(0.0..1.0);
                let x: Vec<f64> = (0..SHAPE.len()).map(|i| (a * (1.0 + i as f64 / 64.0)).min(1.0)).collect();
                let mut t = TargetVector::default();
                for c in 0..8 {
                    t.0[c] = (c as f64 + 1.0) * a;
                }
                features.push(x);
                targets.push(t);
            }
            LabeledSequence { features, targets }
        })
        .collect()
}

fn configs() -> Vec<PredictorConfig> {
    let quick = TrainConfig {
        epochs: 5,
        batch_size: 8,
        ..TrainConfig::default()
    };
    vec![
        PredictorConfig::Gp {
            gp: MultiGpConfig {
                gp: GpConfig {
                    max_iter: 20,
                    starts: 1,
                    ..GpConfig::default()
                },
                ..MultiGpConfig::default()
            },
        },
        PredictorConfig::Gp {
            gp: MultiGpConfig {
                mode: GpMode::Fitc { inducing_frac: 0.3 },
                gp: GpConfig {
                    max_iter: 20,
                    starts: 1,
                    ..GpConfig::default()
                },
                ..MultiGpConfig::default()
            },
        },
        PredictorConfig::Cnn {
            spec: CnnSpec {
                conv: vec![ConvLayerSpec { kernels: 2, size: 3 }],
                hidden: 4,
                ..CnnSpec::default()
            },
            train: quick,
        },
        PredictorConfig::NnFd {
            spec: FdNetSpec {
                hidden: vec![6],
                ..FdNetSpec::default()
            },
            train: quick,
        },
        PredictorConfig::RnnFd {
            spec: RnnSpec {
                hidden: 5,
                window: 4,
                ..RnnSpec::default()
            },
            train: quick,
        },
    ]
}

#[test]
fn every_predictor_trains_predicts_and_round_trips() {
    let train = dataset(1, 4, 10);
    let val = dataset(2, 1, 10);
    let test = dataset(3, 1, 10);
    let dir = tempfile::tempdir().unwrap();
    for config in configs() {
        let (model, report) = PredictorModel::train(&config, &train, &val, SHAPE, 7).unwrap();
        assert_eq!(model.kind(), config.name());
        assert_eq!(report.is_some(), config.uses_validation());
        let pred = model.predict_sequence(&test[0].features).unwrap();
        assert_eq!(pred.mean.len(), 10);
        assert!(pred.mean.iter().all(|t| t.0.iter().all(|v| v.is_finite())));
        assert_eq!(pred.std.is_some(), matches!(config, PredictorConfig::Gp { .. }));
        let path = dir.path().join(format!("{}.json", config.name()));
        model.save(&path).unwrap();
        let loaded = PredictorModel::load(&path).unwrap();
        let again = loaded.predict_sequence(&test[0].features).unwrap();
        assert_eq!(again, pred, "{}", config.name());
        let single = Predictor::predict(&model, &test[0].features[0]);
        if config.name() != "rnnfd" {
            assert_eq!(single, pred.mean[0]);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let train = dataset(4, 3, 8);
    let val = dataset(5, 1, 8);
    for config in configs() {
        let (a, _) = PredictorModel::train(&config, &train, &val, SHAPE, 3).unwrap();
        let (b, _) = PredictorModel::train(&config, &train, &val, SHAPE, 3).unwrap();
        let x = &train[0].features;
        assert_eq!(a.predict_sequence(x).unwrap(), b.predict_sequence(x).unwrap());
    }
}

#[test]
fn standardizer_inverts() {
    let data = dataset(6, 2, 5);
    let s = Standardizer::fit(data.iter().flat_map(|d| d.targets.iter()));
    for t in &data[0].targets {
        let back = s.invert(&s.apply(t));
        for c in 0..8 {
            assert!((back.0[c] - t.0[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn wrong_feature_length_is_rejected() {
    let train = dataset(8, 2, 5);
    let (model, _) = PredictorModel::train(&configs()[3], &train, &[], SHAPE, 0).unwrap();
    assert!(model.predict_sequence(&[vec![0.0; 3]]).is_err());
    assert!(Predictor::predict(&model, &[0.0; 3]).0.iter().all(|v| v.is_nan()));
}
