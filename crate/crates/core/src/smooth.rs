//! Robust local polynomial smoothing of prediction sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherConfig {
    /// Odd window length in samples.
    pub span: usize,
    /// Local polynomial degree, 1 or 2.
    pub degree: usize,
    pub robust_iterations: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            span: 9,
            degree: 2,
            robust_iterations: 3,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.degree) {
            return Err(Error::Config(format!("smoothing degree {} must be 1 or 2", self.degree)));
        }
        if self.span % 2 == 0 || self.span < self.degree + 2 {
            return Err(Error::Config(format!(
                "smoothing span {} must be odd and at least {}",
                self.span,
                self.degree + 2
            )));
        }
        Ok(())
    }
}

fn tricube(u: f64) -> f64 {
    let a = u.abs();
    if a >= 1.0 {
        0.0
    } else {
        let c = 1.0 - a * a * a;
        c * c * c
    }
}

fn bisquare(u: f64) -> f64 {
    let a = u.abs();
    if a >= 1.0 {
        0.0
    } else {
        let c = 1.0 - a * a;
        c * c
    }
}

/// Weighted least-squares polynomial in `x` evaluated at `x = 0`. Falls back
/// to a lower degree when the weighted design is singular.
fn local_fit(xs: &[f64], ys: &[f64], ws: &[f64], degree: usize) -> f64 {
    for d in (0..=degree).rev() {
        let k = d + 1;
        let mut a = nalgebra::DMatrix::<f64>::zeros(k, k);
        let mut b = nalgebra::DVector::<f64>::zeros(k);
        for ((&x, &y), &w) in xs.iter().zip(ys).zip(ws) {
            if w == 0.0 {
                continue;
            }
            let mut p = [1.0; 3];
            for j in 1..k {
                p[j] = p[j - 1] * x;
            }
            for r in 0..k {
                b[r] += w * p[r] * y;
                for c in 0..k {
                    a[(r, c)] += w * p[r] * p[c];
                }
            }
        }
        if let Some(chol) = nalgebra::Cholesky::new(a.clone()) {
            // reject numerically singular designs, e.g. too few weighted points
            let diag_min = (0..k).map(|i| chol.l()[(i, i)]).fold(f64::INFINITY, f64::min);
            let diag_max = (0..k).map(|i| a[(i, i)].sqrt()).fold(0.0, f64::max);
            if diag_min > 1e-7 * diag_max {
                return chol.solve(&b)[0];
            }
        }
    }
    // every weight vanished: keep the nearest sample
    let i = xs.iter().enumerate().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|(i, _)| i).unwrap_or(0);
    ys[i]
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Robust LOESS: tricube-weighted local polynomial fits over a centered
/// window (cut at the series ends), refined by bisquare reweighting of
/// residuals. A window whose points were mostly rejected as outliers grows
/// until it holds `degree + 2` weighted points.
pub fn smooth(series: &[f64], config: &SmootherConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let n = series.len();
    if n < config.degree + 2 {
        return Err(Error::InvalidInput(format!(
            "series of length {n} too short for degree {} smoothing",
            config.degree
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("series contains non-finite values".into()));
    }
    let half = config.span / 2;
    let min_weighted = config.degree + 2;
    let mut robust = vec![1.0; n];
    let mut fitted = vec![0.0; n];
    let mut xs = Vec::with_capacity(config.span);
    let mut ws = Vec::with_capacity(config.span);
    for iteration in 0..=config.robust_iterations {
        for i in 0..n {
            // widen the window past points the robustness step switched off
            let mut reach = half;
            let (mut lo, mut hi);
            loop {
                lo = i.saturating_sub(reach);
                hi = (i + reach).min(n - 1);
                let live = (lo..=hi).filter(|&j| robust[j] > 0.0).count();
                if live >= min_weighted || (lo == 0 && hi == n - 1) {
                    break;
                }
                reach += 1;
            }
            let bandwidth = (reach + 1) as f64;
            xs.clear();
            ws.clear();
            for j in lo..=hi {
                let x = j as f64 - i as f64;
                xs.push(x);
                ws.push(tricube(x / bandwidth) * robust[j]);
            }
            fitted[i] = local_fit(&xs, &series[lo..=hi], &ws, config.degree);
        }
        if iteration == config.robust_iterations {
            break;
        }
        let residuals: Vec<f64> = series.iter().zip(&fitted).map(|(y, f)| y - f).collect();
        let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
        let mean_abs = abs.iter().sum::<f64>() / n as f64;
        if mean_abs == 0.0 {
            break;
        }
        // exact data leaves a zero median; keep the scale above rounding noise
        let magnitude = series.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let s = median(&mut abs).max(1e-7 * mean_abs).max(64.0 * f64::EPSILON * magnitude);
        for (w, r) in robust.iter_mut().zip(&residuals) {
            *w = bisquare(r / (6.0 * s));
        }
    }
    Ok(fitted)
}

/// Smooths each column of a row-per-sample matrix independently.
pub fn smooth_columns(rows: &[Vec<f64>], config: &SmootherConfig) -> Result<Vec<Vec<f64>>> {
    let Some(first) = rows.first() else {
        return Ok(Vec::new());
    };
    let d = first.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidInput("rows differ in length".into()));
    }
    let mut out = vec![vec![0.0; d]; rows.len()];
    for c in 0..d {
        let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        for (o, v) in out.iter_mut().zip(smooth(&col, config)?) {
            o[c] = v;
        }
    }
    Ok(out)
}
