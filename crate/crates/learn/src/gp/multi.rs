//! Independent scalar GPs, one per output component, sharing one set of
//! training inputs.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{
    choose_inducing, exact_log_likelihood, fitc_log_likelihood, heuristic_hyperparams, optimize_hyperparams, sq_distances,
    sq_distances_self, GpConfig, GpHyperparams, GpModel, Inputs, KernelDistance,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GpMode {
    Exact,
    /// FITC with `ceil(inducing_frac · N)` random inducing points.
    Fitc { inducing_frac: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiGpConfig {
    pub mode: GpMode,
    pub gp: GpConfig,
    /// Exact mode only: fit hyperparameters on a random subset of this many
    /// points, then condition on all of them.
    pub hyper_subset: Option<usize>,
}

impl Default for MultiGpConfig {
    fn default() -> Self {
        Self {
            mode: GpMode::Exact,
            gp: GpConfig::default(),
            hyper_subset: None,
        }
    }
}

/// Multi-output GP: targets are centered per component and each component
/// gets its own hyperparameters.
#[derive(Debug, Clone)]
pub struct MultiGp {
    inputs: Arc<Inputs>,
    means: Vec<f64>,
    models: Vec<GpModel>,
    basis: Inputs,
}

/// Prediction for one query: per-component mean and latent variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPrediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

fn columns(targets: &[Vec<f64>], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let k = targets.first().map_or(0, Vec::len);
    if targets.len() != n || k == 0 || targets.iter().any(|t| t.len() != k) {
        return Err(Error::InvalidInput("targets must be one equal-length row per input".into()));
    }
    let mut means = Vec::with_capacity(k);
    let mut cols = Vec::with_capacity(k);
    for c in 0..k {
        let col: Vec<f64> = targets.iter().map(|t| t[c]).collect();
        let m = col.iter().sum::<f64>() / n as f64;
        means.push(m);
        cols.push(col.iter().map(|v| v - m).collect());
    }
    Ok((means, cols))
}

impl MultiGp {
    pub fn fit(rows: &[Vec<f64>], targets: &[Vec<f64>], config: &MultiGpConfig) -> Result<Self> {
        let inputs = Arc::new(Inputs::from_rows(rows)?);
        let n = inputs.len();
        let (means, cols) = columns(targets, n)?;
        let gp = config.gp;
        let mut rng = ChaCha8Rng::seed_from_u64(gp.seed);
        let models = match config.mode {
            GpMode::Exact => {
                let d2 = sq_distances_self(&inputs);
                let subset: Option<Vec<usize>> = config.hyper_subset.filter(|&h| h < n).map(|h| {
                    let mut idx = sample(&mut rng, n, h).into_vec();
                    idx.sort_unstable();
                    idx
                });
                let sub_d2 = subset.as_ref().map(|idx| d2.select_rows(idx).select_columns(idx));
                cols.into_par_iter()
                    .enumerate()
                    .map(|(c, y)| {
                        let cfg = GpConfig {
                            seed: gp.seed.wrapping_add(c as u64),
                            ..gp
                        };
                        let (fd2, fy) = match (&subset, &sub_d2) {
                            (Some(idx), Some(sd)) => (sd, idx.iter().map(|&i| y[i]).collect()),
                            _ => (&d2, y.clone()),
                        };
                        let init = heuristic_hyperparams(fd2, &fy, gp.distance);
                        let hp = optimize_hyperparams(|hp| exact_log_likelihood(fd2, &fy, hp, gp.distance), &init, &fy, &cfg)?;
                        GpModel::exact_from_sq(inputs.clone(), &d2, y, hp, gp.distance)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            GpMode::Fitc { inducing_frac } => {
                if !(inducing_frac > 0.0 && inducing_frac <= 1.0) {
                    return Err(Error::InvalidInput(format!("inducing fraction {inducing_frac} outside (0, 1]")));
                }
                let m = ((inducing_frac * n as f64).ceil() as usize).clamp(1, n);
                let inducing = choose_inducing(n, m, &mut rng)?;
                let u = inputs.select(&inducing);
                let duu = sq_distances_self(&u);
                let duf = sq_distances(&u, &inputs)?;
                cols.into_par_iter()
                    .enumerate()
                    .map(|(c, y)| {
                        let cfg = GpConfig {
                            seed: gp.seed.wrapping_add(c as u64),
                            ..gp
                        };
                        let init = heuristic_hyperparams(&duu, &y, gp.distance);
                        let hp = optimize_hyperparams(|hp| fitc_log_likelihood(&duu, &duf, &y, hp, gp.distance), &init, &y, &cfg)?;
                        GpModel::fitc_from_sq(inputs.clone(), &duu, &duf, y, hp, gp.distance, inducing.clone())
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Self::assemble(inputs, means, models)
    }

    fn assemble(inputs: Arc<Inputs>, means: Vec<f64>, models: Vec<GpModel>) -> Result<Self> {
        let Some(first) = models.first() else {
            return Err(Error::InvalidInput("no output components".into()));
        };
        let basis = first.basis();
        Ok(Self {
            inputs,
            means,
            models,
            basis,
        })
    }

    pub fn outputs(&self) -> usize {
        self.models.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.dim()
    }

    pub fn n_train(&self) -> usize {
        self.inputs.len()
    }

    pub fn components(&self) -> &[GpModel] {
        &self.models
    }

    pub fn hyperparams(&self) -> Vec<GpHyperparams> {
        self.models.iter().map(|m| *m.hyperparams()).collect()
    }

    /// Predictions for a batch of queries, processed in blocks to bound the
    /// size of the distance matrix.
    pub fn predict_batch(&self, queries: &[Vec<f64>]) -> Result<Vec<GpPrediction>> {
        let mut out = Vec::with_capacity(queries.len());
        for block in queries.chunks(256) {
            let q = Inputs::from_rows(block)?;
            let d2 = sq_distances(&self.basis, &q)?;
            let per_model: Vec<Vec<(f64, f64)>> = self.models.par_iter().map(|m| m.predict_from_sq_block(&d2)).collect();
            for j in 0..q.len() {
                let (mean, variance) = per_model
                    .iter()
                    .zip(&self.means)
                    .map(|(p, mu)| (p[j].0 + mu, p[j].1))
                    .unzip();
                out.push(GpPrediction { mean, variance });
            }
        }
        Ok(out)
    }

    pub fn predict_one(&self, query: &[f64]) -> Result<GpPrediction> {
        Ok(self.predict_batch(&[query.to_vec()])?.remove(0))
    }
}

#[derive(Serialize)]
struct SnapshotRef<'a> {
    distance: KernelDistance,
    dim: usize,
    #[serde(with = "crate::blob")]
    inputs: &'a [f64],
    means: &'a [f64],
    hyperparams: Vec<GpHyperparams>,
    targets: Vec<Blob<'a>>,
    inducing: Option<&'a [usize]>,
}

#[derive(Serialize)]
#[serde(transparent)]
struct Blob<'a>(#[serde(serialize_with = "crate::blob::serialize")] &'a [f64]);

#[derive(Deserialize)]
#[serde(transparent)]
struct OwnedBlob(#[serde(deserialize_with = "crate::blob::deserialize")] Vec<f64>);

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Snapshot {
    distance: KernelDistance,
    dim: usize,
    #[serde(with = "crate::blob")]
    inputs: Vec<f64>,
    means: Vec<f64>,
    hyperparams: Vec<GpHyperparams>,
    targets: Vec<OwnedBlob>,
    inducing: Option<Vec<usize>>,
}

/// Stored as training data plus hyperparameters; factorizations are rebuilt on load.
impl Serialize for MultiGp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SnapshotRef {
            distance: self.models[0].distance(),
            dim: self.inputs.dim(),
            inputs: self.inputs.flat_data(),
            means: &self.means,
            hyperparams: self.hyperparams(),
            targets: self.models.iter().map(|m| Blob(m.targets())).collect(),
            inducing: self.models[0].inducing(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MultiGp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let snap = Snapshot::deserialize(d)?;
        MultiGp::from_snapshot(snap).map_err(serde::de::Error::custom)
    }
}

impl MultiGp {
    fn from_snapshot(s: Snapshot) -> Result<Self> {
        if s.hyperparams.len() != s.targets.len() || s.means.len() != s.targets.len() {
            return Err(Error::Serialization("component counts disagree".into()));
        }
        let inputs = Arc::new(Inputs::from_flat_data(s.dim, s.inputs)?);
        let models = match &s.inducing {
            None => {
                let d2 = sq_distances_self(&inputs);
                s.targets
                    .into_iter()
                    .zip(&s.hyperparams)
                    .map(|(y, hp)| GpModel::exact_from_sq(inputs.clone(), &d2, y.0, *hp, s.distance))
                    .collect::<Result<Vec<_>>>()?
            }
            Some(idx) => {
                let u = inputs.select(idx);
                let duu = sq_distances_self(&u);
                let duf = sq_distances(&u, &inputs)?;
                s.targets
                    .into_iter()
                    .zip(&s.hyperparams)
                    .map(|(y, hp)| GpModel::fitc_from_sq(inputs.clone(), &duu, &duf, y.0, *hp, s.distance, idx.clone()))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Self::assemble(inputs, s.means, models)
    }
}
