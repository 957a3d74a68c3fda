//! Evaluation report assembled from per-trial test predictions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nailforce_core::{Component, Finger, TargetVector, TrialKey};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::metrics::{component_rmse, derived_quantities, derived_rmse, percentile_binned_rmse, BinPoint, DerivedRmse};

/// Predictions for the evaluated frames of one test trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPrediction {
    pub key: TrialKey,
    /// Frame indices within the trial.
    pub frames: Vec<usize>,
    /// Frame times on the force clock (s).
    pub times: Vec<f64>,
    pub labels: Vec<TargetVector>,
    pub raw: Vec<TargetVector>,
    pub smoothed: Vec<TargetVector>,
    pub std: Option<Vec<TargetVector>>,
    pub oracle: Option<Vec<TargetVector>>,
    /// Whether each frame lies in the static holding phase, when known.
    pub static_phase: Option<Vec<bool>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncSummary {
    pub trials: usize,
    pub mean_score: f64,
    pub min_score: f64,
    /// Largest |recovered − true| camera offset (s), when truth is known.
    pub max_offset_error: Option<f64>,
}

/// Agreement of simultaneous thumb and index predictions while the object
/// is held still: equal grip forces, load forces summing to the weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub frames: usize,
    pub mean_abs_grip_difference: f64,
    pub mean_abs_load_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub group: String,
    pub predictor: String,
    pub train_trials: usize,
    pub train_frames: usize,
    pub val_frames: usize,
    pub test_trials: usize,
    pub epochs: Option<usize>,
    pub best_epoch: Option<usize>,
    pub final_train_loss: Option<f64>,
    pub marker_offset_deg: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub quantity: String,
    pub points: Vec<BinPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: String,
    pub predictor: String,
    pub test_trials: usize,
    pub test_frames: usize,
    /// Per-component RMSE of the smoothed predictions.
    pub rmse: [f64; 8],
    pub rmse_unsmoothed: [f64; 8],
    /// Mean predictive standard deviation per component (GP only).
    pub mean_std: Option<[f64; 8]>,
    pub derived: DerivedRmse,
    pub derived_unsmoothed: DerivedRmse,
    /// Percentile-binned curves of the smoothed predictions: the eight
    /// components followed by force magnitude.
    pub curves: Vec<Curve>,
    /// Per-component RMSE of the generator's inverse map on fresh noisy
    /// canonical images.
    pub oracle_rmse: Option<[f64; 8]>,
    pub oracle_curves: Option<Vec<Curve>>,
    pub sync: SyncSummary,
    pub consistency: Option<ConsistencySummary>,
    pub models: Vec<ModelSummary>,
}

fn flatten<'a>(preds: &'a [TrialPrediction], f: impl Fn(&'a TrialPrediction) -> &'a [TargetVector]) -> Vec<TargetVector> {
    preds.iter().flat_map(|p| f(p).iter().copied()).collect()
}

fn curves(pred: &[TargetVector], truth: &[TargetVector]) -> Result<Vec<Curve>> {
    let mut out = Vec::with_capacity(9);
    for c in Component::ALL {
        let p: Vec<f64> = pred.iter().map(|t| t.get(c)).collect();
        let t: Vec<f64> = truth.iter().map(|t| t.get(c)).collect();
        out.push(Curve {
            quantity: c.name().into(),
            points: percentile_binned_rmse(&p, &t)?,
        });
    }
    let pm: Vec<f64> = derived_quantities(pred).iter().map(|d| d.magnitude).collect();
    let tm: Vec<f64> = derived_quantities(truth).iter().map(|d| d.magnitude).collect();
    out.push(Curve {
        quantity: "force_magnitude".into(),
        points: percentile_binned_rmse(&pm, &tm)?,
    });
    Ok(out)
}

/// Static-phase agreement between the two fingers of each test grasp.
pub fn consistency(preds: &[TrialPrediction], gravity: f64) -> Option<ConsistencySummary> {
    let mut by_grasp: BTreeMap<(u32, u32, u32, u8, u32), [Option<&TrialPrediction>; 2]> = BTreeMap::new();
    for p in preds {
        let k = &p.key;
        let slot = by_grasp
            .entry((k.participant, k.session, k.weight_g, k.surface_id, k.repetition))
            .or_default();
        slot[k.finger as usize] = Some(p);
    }
    let (mut n, mut grip, mut load) = (0usize, 0.0, 0.0);
    for (key, pair) in by_grasp {
        let (Some(thumb), Some(index)) = (pair[Finger::Thumb as usize], pair[Finger::Index as usize]) else {
            continue;
        };
        let (Some(st), Some(si)) = (&thumb.static_phase, &index.static_phase) else {
            continue;
        };
        let weight_n = key.2 as f64 / 1000.0 * gravity;
        for (a, &fa) in thumb.frames.iter().enumerate() {
            let Some(b) = index.frames.iter().position(|&fb| fb == fa) else {
                continue;
            };
            if !(st[a] && si[b]) {
                continue;
            }
            let (pt, pi) = (thumb.smoothed[a].force(), index.smoothed[b].force());
            grip += (pt[2] - pi[2]).abs();
            load += (pt[0] + pi[0] - weight_n).abs();
            n += 1;
        }
    }
    (n > 0).then(|| ConsistencySummary {
        frames: n,
        mean_abs_grip_difference: grip / n as f64,
        mean_abs_load_residual: load / n as f64,
    })
}

pub struct ReportContext {
    pub scheme: String,
    pub predictor: String,
    pub sync: SyncSummary,
    pub models: Vec<ModelSummary>,
    pub gravity: f64,
}

pub fn evaluate(preds: &[TrialPrediction], ctx: ReportContext) -> Result<EvalReport> {
    let labels = flatten(preds, |p| &p.labels);
    if labels.is_empty() {
        return Err(Error::stage("eval", "no test frames"));
    }
    let raw = flatten(preds, |p| &p.raw);
    let smoothed = flatten(preds, |p| &p.smoothed);
    let mean_std = if preds.iter().all(|p| p.std.is_some()) {
        let std = flatten(preds, |p| p.std.as_deref().unwrap_or_default());
        let mut m = [0.0; 8];
        for t in &std {
            for (mc, v) in m.iter_mut().zip(t.0) {
                *mc += v / std.len() as f64;
            }
        }
        Some(m)
    } else {
        None
    };
    let (oracle_rmse, oracle_curves) = if preds.iter().all(|p| p.oracle.is_some()) {
        let oracle = flatten(preds, |p| p.oracle.as_deref().unwrap_or_default());
        (Some(component_rmse(&oracle, &labels)?), Some(curves(&oracle, &labels)?))
    } else {
        (None, None)
    };
    Ok(EvalReport {
        scheme: ctx.scheme,
        predictor: ctx.predictor,
        test_trials: preds.len(),
        test_frames: labels.len(),
        rmse: component_rmse(&smoothed, &labels)?,
        rmse_unsmoothed: component_rmse(&raw, &labels)?,
        mean_std,
        derived: derived_rmse(&smoothed, &labels)?,
        derived_unsmoothed: derived_rmse(&raw, &labels)?,
        curves: curves(&smoothed, &labels)?,
        oracle_rmse,
        oracle_curves,
        sync: ctx.sync,
        consistency: consistency(preds, ctx.gravity),
        models: ctx.models,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).stage("eval")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).stage("eval")
    }

    /// `component,rmse,rmse_unsmoothed,oracle_rmse,mean_std` rows.
    pub fn components_csv(&self) -> String {
        let mut s = String::from("component,rmse,rmse_unsmoothed,oracle_rmse,mean_std\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in Component::ALL {
            let i = c.index();
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                c.name(),
                self.rmse[i],
                self.rmse_unsmoothed[i],
                opt(self.oracle_rmse.map(|o| o[i])),
                opt(self.mean_std.map(|o| o[i]))
            );
        }
        s
    }

    /// `source,quantity,percentile,mean,rmse,count` rows for every curve.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("source,quantity,percentile,mean,rmse,count\n");
        let sets = [("model", Some(&self.curves)), ("oracle", self.oracle_curves.as_ref())];
        for (source, set) in sets {
            for curve in set.into_iter().flatten() {
                for p in &curve.points {
                    let _ = writeln!(s, "{source},{},{},{},{},{}", curve.quantity, p.percentile, p.mean, p.rmse, p.count);
                }
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scheme     {}", self.scheme);
        let _ = writeln!(s, "predictor  {}", self.predictor);
        let _ = writeln!(s, "test       {} trials, {} frames", self.test_trials, self.test_frames);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<10}{:>12}{:>12}{:>12}{:>12}", "component", "rmse", "unsmoothed", "oracle", "mean std");
        for c in Component::ALL {
            let i = c.index();
            let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
            let _ = writeln!(
                s,
                "{:<10}{:>12.4}{:>12.4}{:>12}{:>12}",
                c.name(),
                self.rmse[i],
                self.rmse_unsmoothed[i],
                cell(self.oracle_rmse.map(|o| o[i])),
                cell(self.mean_std.map(|o| o[i]))
            );
        }
        let _ = writeln!(s);
        let d = &self.derived;
        let _ = writeln!(s, "force magnitude rmse   {:.4} N", d.magnitude);
        let _ = writeln!(s, "angle to normal rmse   {:.3} deg", d.angle_deg);
        match d.ratio {
            Some(r) => {
                let _ = writeln!(s, "grip:load ratio rmse   {r:.4} ({} samples)", d.ratio_samples);
            }
            None => {
                let _ = writeln!(s, "grip:load ratio rmse   - (no samples with load ≥ 0.2 N)");
            }
        }
        let _ = writeln!(
            s,
            "sync                   {} trials, score {:.3}..{:.3}",
            self.sync.trials, self.sync.min_score, self.sync.mean_score
        );
        if let Some(c) = &self.consistency {
            let _ = writeln!(
                s,
                "static phase           |Δgrip| {:.4} N, |load − mg| {:.4} N over {} frames",
                c.mean_abs_grip_difference, c.mean_abs_load_residual, c.frames
            );
        }
        for m in &self.models {
            let marker = m.marker_offset_deg.map_or_else(|| "-".into(), |a| format!("{a}°"));
            let _ = writeln!(
                s,
                "model {:<12} {} train frames, {} test trials, marker offset {marker}",
                m.group, m.train_frames, m.test_trials
            );
        }
        s
    }

    /// Writes `report.json`, `components.csv`, `curves.csv` and `summary.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).stage("io")?;
        std::fs::write(dir.join("report.json"), self.to_json()?).stage("io")?;
        std::fs::write(dir.join("components.csv"), self.components_csv()).stage("io")?;
        std::fs::write(dir.join("curves.csv"), self.curves_csv()).stage("io")?;
        std::fs::write(dir.join("summary.txt"), self.summary()).stage("io")?;
        Ok(())
    }
}

/// One row per evaluated frame: key fields, time, then label, raw,
/// smoothed and (when present) std and oracle values per component.
pub fn predictions_csv(preds: &[TrialPrediction]) -> String {
    let mut s = String::from("participant,session,finger,weight_g,surface,repetition,frame,time");
    for prefix in ["label", "raw", "smoothed", "std", "oracle"] {
        for c in Component::ALL {
            let _ = write!(s, ",{prefix}_{}", c.name());
        }
    }
    s.push('\n');
    for p in preds {
        let k = &p.key;
        for i in 0..p.frames.len() {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{}",
                k.participant,
                k.session,
                k.finger.name(),
                k.weight_g,
                k.surface_id,
                k.repetition,
                p.frames[i],
                p.times[i]
            );
            for set in [Some(&p.labels), Some(&p.raw), Some(&p.smoothed), p.std.as_ref(), p.oracle.as_ref()] {
                for c in 0..8 {
                    match set {
                        Some(v) => {
                            let _ = write!(s, ",{}", v[i].0[c]);
                        }
                        None => s.push(','),
                    }
                }
            }
            s.push('\n');
        }
    }
    s
}
