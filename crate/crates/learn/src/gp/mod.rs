//! Gaussian-process regression: exact inference and the FITC sparse
//! approximation, with hyperparameters fitted by maximising the marginal
//! likelihood in log space.

mod fitc;
pub mod kernel;
pub mod multi;
pub mod optimize;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use fitc::fitc_log_likelihood;
pub use kernel::{se_kernel, sq_distances, sq_distances_self, GpHyperparams, Inputs, KernelDistance};
pub use multi::{GpMode, MultiGp, MultiGpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub distance: KernelDistance,
    /// Quasi-Newton iterations per start.
    pub max_iter: usize,
    /// Number of optimizer starts: the initial guess plus random perturbations of it.
    pub starts: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            distance: KernelDistance::Norm,
            max_iter: 200,
            starts: 3,
            seed: 0,
        }
    }
}

/// Kernel matrix for precomputed squared distances.
pub(crate) fn kernel_matrix(d2: &DMatrix<f64>, hp: &GpHyperparams, distance: KernelDistance) -> DMatrix<f64> {
    d2.map(|v| hp.kernel(v, distance))
}

/// Cholesky factor of `k`, retrying with growing diagonal jitter only if
/// the plain factorization fails. Returns the factor and the jitter used.
pub(crate) fn cholesky_with_jitter(k: DMatrix<f64>, scale: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let mut jitter = 1e-8 * scale;
    while jitter <= 1e-2 * scale {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical("covariance matrix is not positive definite even with jitter".into()))
}

fn check_targets(inputs: &Inputs, y: &[f64]) -> Result<()> {
    if inputs.len() != y.len() {
        return Err(Error::InvalidInput(format!("{} inputs but {} targets", inputs.len(), y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite target".into()));
    }
    Ok(())
}

/// Exact log marginal likelihood `−½yᵀ(K+σn²I)⁻¹y − ½log|K+σn²I| − (N/2)log 2π`
/// and its gradient with respect to `(ln σf², ln l, ln σn²)`.
pub fn exact_log_likelihood(
    d2: &DMatrix<f64>,
    y: &[f64],
    hp: &GpHyperparams,
    distance: KernelDistance,
) -> Result<(f64, [f64; 3])> {
    let n = y.len();
    if d2.nrows() != n || d2.ncols() != n {
        return Err(Error::InvalidInput("distance matrix does not match targets".into()));
    }
    let kf = kernel_matrix(d2, hp, distance);
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += hp.sigma_n2;
    }
    let (chol, _) = cholesky_with_jitter(k, hp.sigma_f2)?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let value = -0.5 * yv.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln();
    // ∂/∂θ = ½ tr((ααᵀ − K⁻¹) ∂K/∂θ)
    let kinv = chol.inverse();
    let l2 = hp.length_scale * hp.length_scale;
    let mut g = [0.0; 3];
    for j in 0..n {
        for i in 0..n {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let kij = kf[(i, j)];
            g[0] += w * kij;
            g[1] += w * kij * distance.scaled(d2[(i, j)]) / l2;
        }
        g[2] += (alpha[j] * alpha[j] - kinv[(j, j)]) * hp.sigma_n2;
    }
    Ok((value, [0.5 * g[0], 0.5 * g[1], 0.5 * g[2]]))
}

/// Starting hyperparameters from the data scale: `σf²` the target second
/// moment, `l` putting the median distance at one length unit, `σn²` a
/// tenth of `σf²`.
pub fn heuristic_hyperparams(d2: &DMatrix<f64>, y: &[f64], distance: KernelDistance) -> GpHyperparams {
    let scale = target_scale(y);
    let mut s: Vec<f64> = Vec::new();
    let n = d2.nrows();
    let stride = (n * n / 20_000).max(1);
    for (k, v) in d2.iter().enumerate().step_by(stride) {
        if k / n != k % n {
            s.push(distance.scaled(*v));
        }
    }
    s.sort_by(f64::total_cmp);
    let mut med = s.get(s.len() / 2).copied().unwrap_or(0.0);
    if med <= 0.0 {
        med = s.iter().sum::<f64>() / s.len().max(1) as f64;
    }
    let length = if med > 0.0 { (0.5 * med).sqrt() } else { 1.0 };
    GpHyperparams::new(scale, length, 0.1 * scale)
}

fn target_scale(y: &[f64]) -> f64 {
    let m = y.iter().map(|v| v * v).sum::<f64>() / y.len().max(1) as f64;
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Log-space box around a starting point within which the optimizer searches.
fn log_bounds(init: &GpHyperparams, y: &[f64]) -> ([f64; 3], [f64; 3]) {
    let scale = target_scale(y);
    let p = init.to_log();
    let lo = [p[0] - 1e4f64.ln(), p[1] - 1e2f64.ln(), (1e-8 * scale).ln()];
    let hi = [p[0] + 1e4f64.ln(), p[1] + 1e2f64.ln(), (1e1 * scale).ln()];
    (lo, hi)
}

/// Maximises `objective` (value, gradient in log space) from `init` and
/// `config.starts − 1` random perturbations of it; keeps the best.
pub fn optimize_hyperparams<F>(objective: F, init: &GpHyperparams, y: &[f64], config: &GpConfig) -> Result<GpHyperparams>
where
    F: Fn(&GpHyperparams) -> Result<(f64, [f64; 3])>,
{
    init.validate()?;
    let (lo, hi) = log_bounds(init, y);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let neg = |p: &[f64]| -> Option<(f64, Vec<f64>)> {
        let (v, g) = objective(&GpHyperparams::from_log(p)).ok()?;
        (v.is_finite() && g.iter().all(|x| x.is_finite())).then(|| (-v, g.iter().map(|x| -x).collect()))
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let base = init.to_log();
    for start in 0..config.starts.max(1) {
        let x0: Vec<f64> = if start == 0 {
            base.to_vec()
        } else {
            (0..3).map(|i| (base[i] + rng.random_range(-1.5..1.5)).clamp(lo[i], hi[i])).collect()
        };
        if let Some((x, v)) = optimize::minimize_box(neg, &x0, &lo, &hi, config.max_iter, 1e-7) {
            if best.as_ref().is_none_or(|(_, b)| v < *b) {
                best = Some((x, v));
            }
        }
    }
    let (x, _) = best.ok_or_else(|| Error::Numerical("marginal likelihood could not be evaluated at any start".into()))?;
    Ok(GpHyperparams::from_log(&x))
}

#[derive(Debug, Clone)]
enum Factors {
    Exact {
        chol: Cholesky<f64, Dyn>,
        alpha: DVector<f64>,
    },
    Fitc(fitc::FitcFactors),
}

/// A fitted single-output GP. Factorizations are built from the
/// hyperparameters at construction and never change afterwards.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Arc<Inputs>,
    y: Vec<f64>,
    hp: GpHyperparams,
    distance: KernelDistance,
    inducing: Option<Vec<usize>>,
    factors: Factors,
}

impl GpModel {
    /// Exact GP with fixed hyperparameters.
    pub fn exact(inputs: Arc<Inputs>, y: Vec<f64>, hp: GpHyperparams, distance: KernelDistance) -> Result<Self> {
        let d2 = sq_distances_self(&inputs);
        Self::exact_from_sq(inputs, &d2, y, hp, distance)
    }

    pub(crate) fn exact_from_sq(
        inputs: Arc<Inputs>,
        d2: &DMatrix<f64>,
        y: Vec<f64>,
        hp: GpHyperparams,
        distance: KernelDistance,
    ) -> Result<Self> {
        check_targets(&inputs, &y)?;
        hp.validate()?;
        let mut k = kernel_matrix(d2, &hp, distance);
        for i in 0..y.len() {
            k[(i, i)] += hp.sigma_n2;
        }
        let (chol, _) = cholesky_with_jitter(k, hp.sigma_f2)?;
        let alpha = chol.solve(&DVector::from_column_slice(&y));
        Ok(Self {
            inputs,
            y,
            hp,
            distance,
            inducing: None,
            factors: Factors::Exact { chol, alpha },
        })
    }

    /// FITC GP with fixed hyperparameters and inducing points `inducing`
    /// (indices into the training inputs).
    pub fn fitc(
        inputs: Arc<Inputs>,
        y: Vec<f64>,
        hp: GpHyperparams,
        distance: KernelDistance,
        inducing: Vec<usize>,
    ) -> Result<Self> {
        let u = inputs.select(&inducing);
        let duu = sq_distances_self(&u);
        let duf = sq_distances(&u, &inputs)?;
        Self::fitc_from_sq(inputs, &duu, &duf, y, hp, distance, inducing)
    }

    pub(crate) fn fitc_from_sq(
        inputs: Arc<Inputs>,
        duu: &DMatrix<f64>,
        duf: &DMatrix<f64>,
        y: Vec<f64>,
        hp: GpHyperparams,
        distance: KernelDistance,
        inducing: Vec<usize>,
    ) -> Result<Self> {
        check_targets(&inputs, &y)?;
        hp.validate()?;
        if inducing.is_empty() || inducing.iter().any(|&i| i >= inputs.len()) {
            return Err(Error::InvalidInput("inducing indices out of range".into()));
        }
        let factors = fitc::FitcFactors::new(duu, duf, &y, &hp, distance)?;
        Ok(Self {
            inputs,
            y,
            hp,
            distance,
            inducing: Some(inducing),
            factors: Factors::Fitc(factors),
        })
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hp
    }

    pub fn distance(&self) -> KernelDistance {
        self.distance
    }

    pub fn inputs(&self) -> &Arc<Inputs> {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn inducing(&self) -> Option<&[usize]> {
        self.inducing.as_deref()
    }

    pub fn is_fitc(&self) -> bool {
        self.inducing.is_some()
    }

    /// Points the predictive equations compare queries against: all
    /// training inputs for exact inference, the inducing set for FITC.
    pub fn basis(&self) -> Inputs {
        match &self.inducing {
            Some(idx) => self.inputs.select(idx),
            None => (*self.inputs).clone(),
        }
    }

    /// Predictive mean and variance of the latent function from the squared
    /// distances between the query and each basis point.
    pub fn predict_from_sq(&self, d2: &[f64]) -> (f64, f64) {
        let k: DVector<f64> = DVector::from_iterator(d2.len(), d2.iter().map(|&v| self.hp.kernel(v, self.distance)));
        let (mean, var) = match &self.factors {
            Factors::Exact { chol, alpha } => {
                let v = chol.l_dirty().solve_lower_triangular(&k).expect("nonzero diagonal");
                (k.dot(alpha), self.hp.sigma_f2 - v.norm_squared())
            }
            Factors::Fitc(f) => f.predict(&k, self.hp.sigma_f2),
        };
        (mean, var.clamp(0.0, self.hp.sigma_f2))
    }

    /// [`predict_from_sq`](Self::predict_from_sq) for every column of an
    /// `n_basis × n_queries` squared-distance matrix. The exact variance
    /// term is a forward substitution over strips of columns at once.
    pub fn predict_from_sq_block(&self, d2: &DMatrix<f64>) -> Vec<(f64, f64)> {
        let Factors::Exact { chol, alpha } = &self.factors else {
            return (0..d2.ncols()).map(|j| self.predict_from_sq(d2.column(j).as_slice())).collect();
        };
        // strip width that keeps the working set cache-resident
        const STRIP: usize = 32;
        let n = d2.nrows();
        let l = chol.l_dirty();
        let mut out = Vec::with_capacity(d2.ncols());
        let mut v = vec![0.0; n * STRIP];
        for c0 in (0..d2.ncols()).step_by(STRIP) {
            let b = STRIP.min(d2.ncols() - c0);
            // row-major n × b so each substitution step is a contiguous axpy
            let mut mean = vec![0.0; b];
            for i in 0..n {
                for j in 0..b {
                    let k = self.hp.kernel(d2[(i, c0 + j)], self.distance);
                    v[i * b + j] = k;
                    mean[j] += k * alpha[i];
                }
            }
            // column-oriented substitution: reads L one contiguous column at a time
            let mut ss = vec![0.0; b];
            for p in 0..n {
                let col = l.column(p);
                let (head, tail) = v.split_at_mut((p + 1) * b);
                let row = &mut head[p * b..];
                let d = col[p];
                for (s, r) in ss.iter_mut().zip(row.iter_mut()) {
                    *r /= d;
                    *s += *r * *r;
                }
                for (i, lip) in col.iter().enumerate().skip(p + 1) {
                    let target = &mut tail[(i - p - 1) * b..(i - p) * b];
                    for (t, r) in target.iter_mut().zip(row.iter()) {
                        *t -= lip * r;
                    }
                }
            }
            out.extend(
                mean.into_iter()
                    .zip(ss)
                    .map(|(m, s)| (m, (self.hp.sigma_f2 - s).clamp(0.0, self.hp.sigma_f2))),
            );
        }
        out
    }

    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        Ok(self.predict_many(&[x.to_vec()])?[0])
    }

    pub fn predict_many(&self, queries: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
        let q = Inputs::from_rows(queries)?;
        let d2 = sq_distances(&self.basis(), &q)?;
        Ok((0..q.len()).map(|j| self.predict_from_sq(d2.column(j).as_slice())).collect())
    }
}

/// Fits hyperparameters by maximising the exact marginal likelihood, then
/// builds the model.
pub fn fit_exact(inputs: Arc<Inputs>, y: Vec<f64>, init: Option<GpHyperparams>, config: &GpConfig) -> Result<GpModel> {
    check_targets(&inputs, &y)?;
    let d2 = sq_distances_self(&inputs);
    let init = init.unwrap_or_else(|| heuristic_hyperparams(&d2, &y, config.distance));
    let hp = optimize_hyperparams(|hp| exact_log_likelihood(&d2, &y, hp, config.distance), &init, &y, config)?;
    GpModel::exact_from_sq(inputs, &d2, y, hp, config.distance)
}

/// Uniform random choice of `m` inducing indices out of `n`, without replacement.
pub fn choose_inducing(n: usize, m: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::InvalidInput(format!("{m} inducing points requested from {n} inputs")));
    }
    let mut idx = sample(rng, n, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Draws `m` inducing points, fits hyperparameters by maximising the FITC
/// marginal likelihood, then builds the model. Never forms an `N × N` matrix.
pub fn fit_fitc(
    inputs: Arc<Inputs>,
    y: Vec<f64>,
    m: usize,
    init: Option<GpHyperparams>,
    config: &GpConfig,
    rng: &mut impl Rng,
) -> Result<GpModel> {
    check_targets(&inputs, &y)?;
    let inducing = choose_inducing(inputs.len(), m, rng)?;
    let u = inputs.select(&inducing);
    let duu = sq_distances_self(&u);
    let duf = sq_distances(&u, &inputs)?;
    let init = init.unwrap_or_else(|| heuristic_hyperparams(&duu, &y, config.distance));
    let hp = optimize_hyperparams(|hp| fitc_log_likelihood(&duu, &duf, &y, hp, config.distance), &init, &y, config)?;
    GpModel::fitc_from_sq(inputs, &duu, &duf, y, hp, config.distance, inducing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arc(rows: &[Vec<f64>]) -> Arc<Inputs> {
        Arc::new(Inputs::from_rows(rows).unwrap())
    }

    #[test]
    fn single_point_posterior() {
        let m = GpModel::exact(arc(&[vec![0.3, 0.1]]), vec![2.0], GpHyperparams::new(1.0, 1.0, 1.0), KernelDistance::Norm)
            .unwrap();
        let (mean, var) = m.predict(&[0.3, 0.1]).unwrap();
        assert!((mean - 1.0).abs() < 1e-14 && (var - 0.5).abs() < 1e-14);
    }

    #[test]
    fn far_queries_revert_to_the_prior() {
        let m = GpModel::exact(
            arc(&[vec![0.0], vec![1.0]]),
            vec![1.0, -1.0],
            GpHyperparams::new(2.0, 1.0, 0.1),
            KernelDistance::SquaredNorm,
        )
        .unwrap();
        let (mean, var) = m.predict(&[1e3]).unwrap();
        assert!(mean.abs() < 1e-12 && (var - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_targets_and_bad_inducing_counts() {
        assert!(GpModel::exact(arc(&[vec![0.0]]), vec![1.0, 2.0], GpHyperparams::new(1.0, 1.0, 1.0), KernelDistance::Norm).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(choose_inducing(3, 4, &mut rng).is_err());
        assert_eq!(choose_inducing(3, 3, &mut rng).unwrap(), vec![0, 1, 2]);
    }
}
