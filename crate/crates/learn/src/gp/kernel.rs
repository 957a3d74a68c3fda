//! Covariance function and pairwise distances.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quantity inside the exponential of the covariance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelDistance {
    /// `σf² exp(−‖x − x'‖ / (2l²))`, the unsquared norm.
    #[default]
    Norm,
    /// `σf² exp(−‖x − x'‖² / (2l²))`, the conventional squared exponential.
    SquaredNorm,
}

impl KernelDistance {
    /// Maps a squared distance to the quantity `s` in `exp(−s / (2l²))`.
    #[inline]
    pub fn scaled(self, d2: f64) -> f64 {
        match self {
            KernelDistance::Norm => d2.max(0.0).sqrt(),
            KernelDistance::SquaredNorm => d2.max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub sigma_f2: f64,
    pub length_scale: f64,
    pub sigma_n2: f64,
}

impl GpHyperparams {
    pub fn new(sigma_f2: f64, length_scale: f64, sigma_n2: f64) -> Self {
        Self {
            sigma_f2,
            length_scale,
            sigma_n2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if ok(self.sigma_f2) && ok(self.length_scale) && ok(self.sigma_n2) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("hyperparameters must be positive: {self:?}")))
        }
    }

    /// `(ln σf², ln l, ln σn²)`, the coordinates the optimizer works in.
    pub fn to_log(&self) -> [f64; 3] {
        [self.sigma_f2.ln(), self.length_scale.ln(), self.sigma_n2.ln()]
    }

    pub fn from_log(p: &[f64]) -> Self {
        Self::new(p[0].exp(), p[1].exp(), p[2].exp())
    }

    /// Covariance for squared distance `d2`.
    #[inline]
    pub fn kernel(&self, d2: f64, distance: KernelDistance) -> f64 {
        self.sigma_f2 * (-distance.scaled(d2) / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// Covariance between two points.
pub fn se_kernel(x: &[f64], x2: &[f64], hp: &GpHyperparams, distance: KernelDistance) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::InvalidInput(format!("dimension mismatch: {} vs {}", x.len(), x2.len())));
    }
    let d2: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(hp.kernel(d2, distance))
}

/// A set of points stored one per column, with cached squared norms.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    dim: usize,
    data: Vec<f64>,
    sq_norms: Vec<f64>,
}

impl Inputs {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::InvalidInput("no input points".into()));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidInput("zero-dimensional inputs".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::InvalidInput(format!("input of dimension {} among {dim}", r.len())));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite input value".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self::from_flat(dim, data))
    }

    /// Points packed one after another, `dim` values each.
    pub fn from_flat_data(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 || data.is_empty() {
            return Err(Error::InvalidInput(format!("{} values do not form {dim}-dimensional points", data.len())));
        }
        Ok(Self::from_flat(dim, data))
    }

    pub fn flat_data(&self) -> &[f64] {
        &self.data
    }

    fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        let sq_norms = data.chunks_exact(dim).map(|p| p.iter().map(|v| v * v).sum()).collect();
        Self { dim, data, sq_norms }
    }

    pub fn len(&self) -> usize {
        self.sq_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq_norms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks_exact(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Inputs {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.point(i));
        }
        Self::from_flat(self.dim, data)
    }

    fn matrix(&self) -> nalgebra::DMatrixView<'_, f64> {
        nalgebra::DMatrixView::from_slice(&self.data, self.dim, self.len())
    }
}

fn direct_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distances `‖aᵢ − bⱼ‖²` as an `a.len() × b.len()` matrix.
///
/// Uses `‖a‖² + ‖b‖² − 2a·b`; entries small against the norms, where that
/// form cancels badly, are recomputed directly.
pub fn sq_distances(a: &Inputs, b: &Inputs) -> Result<DMatrix<f64>> {
    if a.dim != b.dim {
        return Err(Error::InvalidInput(format!("dimension mismatch: {} vs {}", a.dim, b.dim)));
    }
    let mut d = a.matrix().tr_mul(&b.matrix());
    for j in 0..b.len() {
        for i in 0..a.len() {
            let scale = a.sq_norms[i] + b.sq_norms[j];
            let v = scale - 2.0 * d[(i, j)];
            d[(i, j)] = if v < 1e-4 * scale { direct_sq(a.point(i), b.point(j)) } else { v };
        }
    }
    Ok(d)
}

/// Symmetric squared-distance matrix of one point set, with an exact zero diagonal.
pub fn sq_distances_self(a: &Inputs) -> DMatrix<f64> {
    let mut d = sq_distances(a, a).expect("same dimension");
    let n = a.len();
    for j in 0..n {
        d[(j, j)] = 0.0;
        for i in 0..j {
            let v = d[(i, j)];
            d[(j, i)] = v;
        }
    }
    d
}
