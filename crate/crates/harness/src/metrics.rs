//! Error metrics over predicted and measured target sequences.

use nailforce_core::TargetVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tangential force below which the normal:tangential ratio is undefined (N).
pub const RATIO_MIN_TANGENTIAL: f64 = 0.2;

/// Number of percentile bins, centred at 0, 5, …, 100 %.
pub const N_BINS: usize = 21;

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "rmse over {} predictions and {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("rmse of an empty sequence".into()));
    }
    let se: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((se / pred.len() as f64).sqrt())
}

/// Quantile of sorted data with linear interpolation between order
/// statistics (`q` in percent).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinPoint {
    /// Bin centre in percent: 0, 5, …, 100.
    pub percentile: f64,
    /// Mean of the measured values in the bin.
    pub mean: f64,
    pub rmse: f64,
    pub count: usize,
}

/// Errors grouped by the percentile rank of the measured value. Bin `k`
/// spans the quantiles at `5k ∓ 2.5` %, clamped to `[0, 100]`, and holds the
/// values `e_k ≤ x < e_{k+1}`; the upper edge is closed for the last bin and
/// for bins whose edges coincide. Empty bins are omitted from the result.
pub fn percentile_binned_rmse(pred: &[f64], truth: &[f64]) -> Result<Vec<BinPoint>> {
    rmse(pred, truth)?;
    let mut sorted = truth.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite measured value".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(N_BINS);
    for k in 0..N_BINS {
        let centre = 5.0 * k as f64;
        let lo = quantile_sorted(&sorted, (centre - 2.5).clamp(0.0, 100.0));
        let hi = quantile_sorted(&sorted, (centre + 2.5).clamp(0.0, 100.0));
        let closed = k == N_BINS - 1 || lo == hi;
        let (mut n, mut sum, mut se) = (0usize, 0.0, 0.0);
        for (p, t) in pred.iter().zip(truth) {
            if *t >= lo && (*t < hi || (closed && *t == hi)) {
                n += 1;
                sum += t;
                se += (p - t) * (p - t);
            }
        }
        if n > 0 {
            out.push(BinPoint {
                percentile: centre,
                mean: sum / n as f64,
                rmse: (se / n as f64).sqrt(),
                count: n,
            });
        }
    }
    Ok(out)
}

/// Physical quantities derived from one force vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub magnitude: f64,
    /// Load force: length of the tangential part `(fx, fy)`.
    pub tangential: f64,
    /// Angle between the force and the surface normal, degrees.
    pub angle_deg: f64,
    /// Grip to load ratio, only where the load is at least
    /// [`RATIO_MIN_TANGENTIAL`].
    pub ratio: Option<f64>,
}

pub fn derived(f: [f64; 3]) -> Derived {
    let tangential = f[0].hypot(f[1]);
    Derived {
        magnitude: (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt(),
        tangential,
        angle_deg: tangential.atan2(f[2]).to_degrees(),
        ratio: (tangential >= RATIO_MIN_TANGENTIAL).then(|| f[2] / tangential),
    }
}

pub fn derived_quantities(seq: &[TargetVector]) -> Vec<Derived> {
    seq.iter().map(|t| derived(t.force())).collect()
}

/// RMSE of magnitude, angle and ratio. The ratio uses only samples where
/// both the prediction and the measurement define it; `None` if none do.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedRmse {
    pub magnitude: f64,
    pub angle_deg: f64,
    pub ratio: Option<f64>,
    pub ratio_samples: usize,
}

pub fn derived_rmse(pred: &[TargetVector], truth: &[TargetVector]) -> Result<DerivedRmse> {
    let p = derived_quantities(pred);
    let t = derived_quantities(truth);
    let col = |s: &[Derived], f: fn(&Derived) -> f64| s.iter().map(f).collect::<Vec<_>>();
    let magnitude = rmse(&col(&p, |d| d.magnitude), &col(&t, |d| d.magnitude))?;
    let angle_deg = rmse(&col(&p, |d| d.angle_deg), &col(&t, |d| d.angle_deg))?;
    let (rp, rt): (Vec<f64>, Vec<f64>) = p
        .iter()
        .zip(&t)
        .filter_map(|(a, b)| Some((a.ratio?, b.ratio?)))
        .unzip();
    let ratio = if rp.is_empty() { None } else { Some(rmse(&rp, &rt)?) };
    Ok(DerivedRmse {
        magnitude,
        angle_deg,
        ratio,
        ratio_samples: rp.len(),
    })
}

/// Per-component RMSE of two target sequences.
pub fn component_rmse(pred: &[TargetVector], truth: &[TargetVector]) -> Result<[f64; 8]> {
    let mut out = [0.0; 8];
    for (c, o) in out.iter_mut().enumerate() {
        let p: Vec<f64> = pred.iter().map(|t| t.0[c]).collect();
        let t: Vec<f64> = truth.iter().map(|t| t.0[c]).collect();
        *o = rmse(&p, &t)?;
    }
    Ok(out)
}
