//! One trained regressor behind a common interface, mapping flattened
//! aligned images to target vectors.

use std::path::Path;

use nailforce_core::calibration::Predictor;
use nailforce_core::TargetVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpMode, MultiGp, MultiGpConfig};
use crate::neural::{train, Cnn, CnnSpec, Example, FdNet, FdNetSpec, FdRnn, RnnSpec, Sequence, TrainConfig, TrainReport};

const OUTPUTS: usize = 8;

/// Frame features and per-frame targets of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<TargetVector>,
}

/// Image geometry of the feature vectors, which are laid out row-major with
/// interleaved channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Interleaved `(row, column, channel)` to planar `(channel, row, column)`.
    fn to_planar(self, x: &[f64]) -> Vec<f64> {
        if self.channels == 1 {
            return x.to_vec();
        }
        let px = self.height * self.width;
        let mut out = vec![0.0; x.len()];
        for (i, v) in x.iter().enumerate() {
            out[(i % self.channels) * px + i / self.channels] = *v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorConfig {
    Gp {
        #[serde(default)]
        gp: MultiGpConfig,
    },
    Cnn {
        #[serde(default)]
        spec: CnnSpec,
        #[serde(default)]
        train: TrainConfig,
    },
    NnFd {
        #[serde(default)]
        spec: FdNetSpec,
        #[serde(default)]
        train: TrainConfig,
    },
    RnnFd {
        #[serde(default)]
        spec: RnnSpec,
        #[serde(default)]
        train: TrainConfig,
    },
}

impl PredictorConfig {
    /// Whether training uses a validation split.
    pub fn uses_validation(&self) -> bool {
        !matches!(self, PredictorConfig::Gp { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PredictorConfig::Gp { gp } => match gp.mode {
                GpMode::Exact => "gp-exact",
                GpMode::Fitc { .. } => "gp-fitc",
            },
            PredictorConfig::Cnn { .. } => "cnn",
            PredictorConfig::NnFd { .. } => "nnfd",
            PredictorConfig::RnnFd { .. } => "rnnfd",
        }
    }
}

/// Per-component affine map of targets to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; OUTPUTS],
    pub scale: [f64; OUTPUTS],
}

impl Standardizer {
    pub fn fit<'a>(targets: impl Iterator<Item = &'a TargetVector>) -> Self {
        let mut n = 0.0;
        let mut s = [0.0; OUTPUTS];
        let mut s2 = [0.0; OUTPUTS];
        for t in targets {
            n += 1.0;
            for c in 0..OUTPUTS {
                s[c] += t.0[c];
                s2[c] += t.0[c] * t.0[c];
            }
        }
        let mut mean = [0.0; OUTPUTS];
        let mut scale = [1.0; OUTPUTS];
        if n > 0.0 {
            for c in 0..OUTPUTS {
                mean[c] = s[c] / n;
                let var = (s2[c] / n - mean[c] * mean[c]).max(0.0);
                if var.sqrt() > 1e-12 * (1.0 + mean[c].abs()) {
                    scale[c] = var.sqrt();
                }
            }
        }
        Self { mean, scale }
    }

    pub fn apply(&self, t: &TargetVector) -> Vec<f64> {
        (0..OUTPUTS).map(|c| (t.0[c] - self.mean[c]) / self.scale[c]).collect()
    }

    pub fn invert(&self, z: &[f64]) -> TargetVector {
        let mut t = TargetVector::default();
        for c in 0..OUTPUTS {
            t.0[c] = z[c] * self.scale[c] + self.mean[c];
        }
        t
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorModel {
    Gp {
        model: MultiGp,
    },
    Cnn {
        net: Cnn,
        shape: ImageShape,
        scaler: Standardizer,
    },
    NnFd {
        net: FdNet,
        scaler: Standardizer,
    },
    RnnFd {
        net: FdRnn,
        scaler: Standardizer,
    },
}

/// Predicted targets with, for GP models, the per-component predictive
/// standard deviation of the latent function.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePrediction {
    pub mean: Vec<TargetVector>,
    pub std: Option<Vec<TargetVector>>,
}

fn frames(data: &[LabeledSequence]) -> impl Iterator<Item = (&Vec<f64>, &TargetVector)> {
    data.iter().flat_map(|s| s.features.iter().zip(&s.targets))
}

fn check_data(data: &[LabeledSequence], dim: usize) -> Result<()> {
    for s in data {
        if s.features.len() != s.targets.len() {
            return Err(Error::InvalidInput("features and targets differ in length".into()));
        }
        if s.features.iter().any(|f| f.len() != dim) {
            return Err(Error::InvalidInput(format!("feature vectors must have length {dim}")));
        }
    }
    Ok(())
}

/// Consecutive chunks of at most `window` frames.
fn windows(s: &LabeledSequence, window: usize, scaler: &Standardizer) -> Vec<Sequence> {
    s.features
        .chunks(window)
        .zip(s.targets.chunks(window))
        .map(|(xs, ys)| Sequence {
            xs: xs.to_vec(),
            ys: ys.iter().map(|t| scaler.apply(t)).collect(),
        })
        .collect()
}

impl PredictorModel {
    /// Trains a predictor. Neural predictors early-stop on `val`; GPs ignore it.
    pub fn train(
        config: &PredictorConfig,
        train_set: &[LabeledSequence],
        val: &[LabeledSequence],
        shape: ImageShape,
        seed: u64,
    ) -> Result<(Self, Option<TrainReport>)> {
        check_data(train_set, shape.len())?;
        check_data(val, shape.len())?;
        if frames(train_set).next().is_none() {
            return Err(Error::InvalidInput("no training frames".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scaler = Standardizer::fit(frames(train_set).map(|(_, t)| t));
        let examples = |data: &[LabeledSequence], planar: bool| -> Vec<Example> {
            frames(data)
                .map(|(x, t)| Example {
                    x: if planar { shape.to_planar(x) } else { x.clone() },
                    y: scaler.apply(t),
                })
                .collect()
        };
        match config {
            PredictorConfig::Gp { gp } => {
                let rows: Vec<Vec<f64>> = frames(train_set).map(|(x, _)| x.clone()).collect();
                let ys: Vec<Vec<f64>> = frames(train_set).map(|(_, t)| t.0.to_vec()).collect();
                let mut cfg = *gp;
                cfg.gp.seed = cfg.gp.seed.wrapping_add(seed);
                let model = MultiGp::fit(&rows, &ys, &cfg)?;
                Ok((PredictorModel::Gp { model }, None))
            }
            PredictorConfig::Cnn { spec, train: tc } => {
                let mut net = Cnn::new(spec.clone(), (shape.channels, shape.height, shape.width), OUTPUTS, &mut rng)?;
                let report = train(&mut net, &examples(train_set, true), &examples(val, true), &seeded(tc, seed))?;
                Ok((PredictorModel::Cnn { net, shape, scaler }, Some(report)))
            }
            PredictorConfig::NnFd { spec, train: tc } => {
                let mut net = FdNet::new(spec.clone(), shape.len(), OUTPUTS, &mut rng)?;
                let report = train(&mut net, &examples(train_set, false), &examples(val, false), &seeded(tc, seed))?;
                Ok((PredictorModel::NnFd { net, scaler }, Some(report)))
            }
            PredictorConfig::RnnFd { spec, train: tc } => {
                let mut net = FdRnn::new(spec.clone(), shape.len(), OUTPUTS, &mut rng)?;
                let seqs = |data: &[LabeledSequence]| -> Vec<Sequence> {
                    data.iter().flat_map(|s| windows(s, spec.window, &scaler)).collect()
                };
                let report = train(&mut net, &seqs(train_set), &seqs(val), &seeded(tc, seed))?;
                Ok((PredictorModel::RnnFd { net, scaler }, Some(report)))
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PredictorModel::Gp { model } => {
                if model.components()[0].is_fitc() {
                    "gp-fitc"
                } else {
                    "gp-exact"
                }
            }
            PredictorModel::Cnn { .. } => "cnn",
            PredictorModel::NnFd { .. } => "nnfd",
            PredictorModel::RnnFd { .. } => "rnnfd",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            PredictorModel::Gp { model } => model.input_dim(),
            PredictorModel::Cnn { shape, .. } => shape.len(),
            PredictorModel::NnFd { net, .. } => net.n_inputs(),
            PredictorModel::RnnFd { net, .. } => net.n_inputs(),
        }
    }

    /// Predictions for the frames of one trial, in order. The recurrent
    /// model restarts from a zero state every `window` frames, as in training.
    pub fn predict_sequence(&self, features: &[Vec<f64>]) -> Result<SequencePrediction> {
        let dim = self.input_dim();
        if let Some(f) = features.iter().find(|f| f.len() != dim) {
            return Err(Error::InvalidInput(format!("feature vector of length {} for a {dim}-input model", f.len())));
        }
        match self {
            PredictorModel::Gp { model } => {
                let preds = model.predict_batch(features)?;
                let mut mean = Vec::with_capacity(preds.len());
                let mut std = Vec::with_capacity(preds.len());
                for p in preds {
                    let mut m = TargetVector::default();
                    let mut s = TargetVector::default();
                    for c in 0..OUTPUTS {
                        m.0[c] = p.mean[c];
                        s.0[c] = p.variance[c].sqrt();
                    }
                    mean.push(m);
                    std.push(s);
                }
                Ok(SequencePrediction { mean, std: Some(std) })
            }
            PredictorModel::Cnn { net, shape, scaler } => {
                let mean = features
                    .par_iter()
                    .map(|x| Ok(scaler.invert(&net.predict(&shape.to_planar(x))?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(SequencePrediction { mean, std: None })
            }
            PredictorModel::NnFd { net, scaler } => {
                let mean = features
                    .par_iter()
                    .map(|x| Ok(scaler.invert(&net.predict(x)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(SequencePrediction { mean, std: None })
            }
            PredictorModel::RnnFd { net, scaler } => {
                let mut mean = Vec::with_capacity(features.len());
                for chunk in features.chunks(net.spec().window) {
                    mean.extend(net.predict_sequence(chunk)?.iter().map(|z| scaler.invert(z)));
                }
                Ok(SequencePrediction { mean, std: None })
            }
        }
    }

    pub fn predict_one(&self, features: &[f64]) -> Result<TargetVector> {
        Ok(self.predict_sequence(&[features.to_vec()])?.mean[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))
    }
}

fn seeded(tc: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed: tc.seed.wrapping_add(seed),
        ..*tc
    }
}

/// Infallible adapter for the calibration search; a failed prediction
/// yields NaN components.
impl Predictor for PredictorModel {
    fn predict(&self, features: &[f64]) -> TargetVector {
        self.predict_one(features).unwrap_or(TargetVector([f64::NAN; OUTPUTS]))
    }
}
