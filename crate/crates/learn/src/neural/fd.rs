//! Fast-dropout moment propagation.
//!
//! With Bernoulli keep masks on a layer's inputs, each pre-activation is
//! treated as Gaussian with the mean and variance of the masked sum; each
//! unit output is then summarised by its mean `ν` and variance `τ²` under
//! that Gaussian.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation value `y = f(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const QUADRATURE_NODES: usize = 64;

/// Gauss–Hermite nodes and weights for the standard normal, from the
/// eigen-decomposition of the Jacobi matrix of the probabilists' Hermite
/// polynomials.
fn standard_normal_quadrature() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = QUADRATURE_NODES;
        let mut j = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64).sqrt();
            j[(k - 1, k)] = b;
            j[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(j);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)] * eig.eigenvectors[(0, i)]))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1 / total).collect())
    })
}

/// Output moments of one unit and their partial derivatives with respect to
/// the input mean `μ` and variance `s²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitMoments {
    pub nu: f64,
    pub tau2: f64,
    pub dnu_dmu: f64,
    pub dnu_ds2: f64,
    pub dtau2_dmu: f64,
    pub dtau2_ds2: f64,
}

/// Sigmoid moments. `ν = σ(μ / √(1 + πs²/8))`; `τ²` is the variance of
/// `σ(X)` under Gauss–Hermite quadrature, taken about `σ(μ)` to limit
/// cancellation.
fn sigmoid_moments(mu: f64, s2: f64) -> UnitMoments {
    let c = 1.0 + std::f64::consts::PI * s2 / 8.0;
    let kappa = 1.0 / c.sqrt();
    let nu = sigmoid(mu * kappa);
    let dnu = nu * (1.0 - nu);
    let dnu_dmu = dnu * kappa;
    let dnu_ds2 = dnu * mu * (-0.5) * c.powf(-1.5) * std::f64::consts::PI / 8.0;
    if s2 <= 0.0 {
        let d = sigmoid(mu);
        let d1 = d * (1.0 - d);
        return UnitMoments {
            nu,
            tau2: 0.0,
            dnu_dmu,
            dnu_ds2,
            dtau2_dmu: 0.0,
            dtau2_ds2: d1 * d1,
        };
    }
    let (z, w) = standard_normal_quadrature();
    let s = s2.sqrt();
    let center = sigmoid(mu);
    // sums of w·g(X) over nodes for g = σ − c, (σ − c)², their μ-derivatives, and z-weighted μ-derivatives
    let (mut m1, mut m2, mut d1, mut d2, mut z1, mut z2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (&zk, &wk) in z.iter().zip(w) {
        let x = mu + s * zk;
        let sg = sigmoid(x);
        let ds = sg * (1.0 - sg);
        let e = sg - center;
        m1 += wk * e;
        m2 += wk * e * e;
        d1 += wk * ds;
        d2 += wk * 2.0 * e * ds;
        z1 += wk * ds * zk;
        z2 += wk * 2.0 * e * ds * zk;
    }
    let raw = m2 - m1 * m1;
    // the center moves with μ but the variance does not depend on it
    let dtau2_dmu = d2 - 2.0 * m1 * d1;
    // exact derivative of the quadrature sum in s², through dX/ds² = z/(2s)
    let dtau2_ds2 = (z2 - 2.0 * m1 * z1) / (2.0 * s);
    let (tau2, dtau2_dmu, dtau2_ds2) = if raw > 0.0 { (raw, dtau2_dmu, dtau2_ds2) } else { (0.0, 0.0, 0.0) };
    UnitMoments {
        nu,
        tau2,
        dnu_dmu,
        dnu_ds2,
        dtau2_dmu,
        dtau2_ds2,
    }
}

/// Moments of `f(X)` for `X ~ N(μ, s²)`. Tanh uses `tanh(x) = 2σ(2x) − 1`.
pub fn unit_moments(mu: f64, s2: f64, activation: Activation) -> UnitMoments {
    match activation {
        Activation::Identity => UnitMoments {
            nu: mu,
            tau2: s2,
            dnu_dmu: 1.0,
            dnu_ds2: 0.0,
            dtau2_dmu: 0.0,
            dtau2_ds2: 1.0,
        },
        Activation::Sigmoid => sigmoid_moments(mu, s2),
        Activation::Tanh => {
            let m = sigmoid_moments(2.0 * mu, 4.0 * s2);
            UnitMoments {
                nu: 2.0 * m.nu - 1.0,
                tau2: 4.0 * m.tau2,
                dnu_dmu: 4.0 * m.dnu_dmu,
                dnu_ds2: 8.0 * m.dnu_ds2,
                dtau2_dmu: 8.0 * m.dtau2_dmu,
                dtau2_ds2: 16.0 * m.dtau2_ds2,
            }
        }
    }
}

/// `(ν, τ²)` of a unit whose input is `N(μ, s²)`.
pub fn fd_unit_moments(mu: f64, s2: f64, activation: Activation) -> Result<(f64, f64)> {
    if !(s2 >= 0.0) || !mu.is_finite() || !s2.is_finite() {
        return Err(Error::InvalidInput(format!("unit moments need finite μ and s² ≥ 0, got ({mu}, {s2})")));
    }
    let m = unit_moments(mu, s2, activation);
    Ok((m.nu, m.tau2))
}

/// Adds the moments of `p · Σᵢ wⱼᵢ zᵢ xᵢ` to `mean`/`var` for every output `j`,
/// where `zᵢ ~ Bernoulli(p)` and `xᵢ` has mean `e[i]`, variance `v[i]`.
/// `w` is row-major `n_out × n_in`. Bias is left to the caller, so a sum of
/// several blocks is computed identically to a single one.
pub(crate) fn accumulate_moments(w: &[f64], e: &[f64], v: &[f64], p: f64, mean: &mut [f64], var: &mut [f64]) {
    let n_in = e.len();
    let q = p * (1.0 - p);
    for (j, (mj, vj)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
        let row = &w[j * n_in..(j + 1) * n_in];
        let mut s = 0.0;
        let mut t = 0.0;
        for i in 0..n_in {
            s += row[i] * e[i];
            t += row[i] * row[i] * (p * v[i] + q * e[i] * e[i]);
        }
        *mj += p * s;
        *vj += t;
    }
}

/// Backward pass of [`accumulate_moments`]: given gradients on the block's
/// mean and variance outputs, adds gradients for `w`, `e` and `v`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_moments_backward(
    w: &[f64],
    e: &[f64],
    v: &[f64],
    p: f64,
    g_mean: &[f64],
    g_var: &[f64],
    gw: &mut [f64],
    ge: &mut [f64],
    gv: &mut [f64],
) {
    let n_in = e.len();
    let q = p * (1.0 - p);
    for j in 0..g_mean.len() {
        let (gm, gs) = (g_mean[j], g_var[j]);
        if gm == 0.0 && gs == 0.0 {
            continue;
        }
        let row = &w[j * n_in..(j + 1) * n_in];
        let grow = &mut gw[j * n_in..(j + 1) * n_in];
        for i in 0..n_in {
            let wi = row[i];
            grow[i] += gm * p * e[i] + gs * 2.0 * wi * (p * v[i] + q * e[i] * e[i]);
            ge[i] += gm * p * wi + gs * wi * wi * 2.0 * q * e[i];
            gv[i] += gs * wi * wi * p;
        }
    }
}

/// Pre-activation moments `(mean, variance)` of a dense layer under input
/// dropout with keep probability `p`. `weights` has one row per output unit.
pub fn fd_layer_moments(
    means: &[f64],
    vars: &[f64],
    weights: &[Vec<f64>],
    bias: &[f64],
    p: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidInput(format!("keep probability {p} outside (0, 1]")));
    }
    if means.len() != vars.len() || weights.iter().any(|r| r.len() != means.len()) || bias.len() != weights.len() {
        return Err(Error::InvalidInput("layer shapes disagree".into()));
    }
    let flat: Vec<f64> = weights.iter().flatten().copied().collect();
    let mut mean = bias.to_vec();
    let mut var = vec![0.0; weights.len()];
    accumulate_moments(&flat, means, vars, p, &mut mean, &mut var);
    Ok((mean, var))
}
