//! FITC: the training covariance is replaced by `Q + Λ`, where
//! `Q = K_fu K_uu⁻¹ K_uf` and `Λ = diag(K_ff − Q) + σn²I`. All work is
//! `O(NM²)` with `M` inducing points.
//!
//! Notation below: `L_u` is the Cholesky factor of `K_uu`, `V = L_u⁻¹ K_uf`,
//! `B = I + V Λ⁻¹ Vᵀ` with factor `L_B`, `G = L_B⁻¹ V Λ⁻¹`, `β = G y`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::kernel::{GpHyperparams, KernelDistance};
use super::{cholesky_with_jitter, kernel_matrix};
use crate::error::{Error, Result};

struct Core {
    kuu: DMatrix<f64>,
    kuf: DMatrix<f64>,
    lu: DMatrix<f64>,
    v: DMatrix<f64>,
    lambda: DVector<f64>,
    lb: DMatrix<f64>,
    g: DMatrix<f64>,
    beta: DVector<f64>,
}

fn core(duu: &DMatrix<f64>, duf: &DMatrix<f64>, y: &[f64], hp: &GpHyperparams, distance: KernelDistance) -> Result<Core> {
    let (m, n) = (duf.nrows(), duf.ncols());
    if duu.nrows() != m || duu.ncols() != m || y.len() != n {
        return Err(Error::InvalidInput("FITC distance matrices do not match the targets".into()));
    }
    let kuu = kernel_matrix(duu, hp, distance);
    let kuf = kernel_matrix(duf, hp, distance);
    let (cu, _) = cholesky_with_jitter(kuu.clone(), hp.sigma_f2)?;
    let lu = cu.unpack();
    let v = lu.solve_lower_triangular(&kuf).ok_or_else(|| Error::Numerical("singular K_uu factor".into()))?;
    let lambda = DVector::from_iterator(
        n,
        v.column_iter().map(|c| (hp.sigma_f2 - c.norm_squared()).max(0.0) + hp.sigma_n2),
    );
    let mut vl = v.clone();
    for (j, mut c) in vl.column_iter_mut().enumerate() {
        c /= lambda[j];
    }
    let mut b = &vl * v.transpose();
    for i in 0..m {
        b[(i, i)] += 1.0;
    }
    let lb = nalgebra::Cholesky::new(b)
        .ok_or_else(|| Error::Numerical("FITC inner matrix not positive definite".into()))?
        .unpack();
    let g = lb.solve_lower_triangular(&vl).ok_or_else(|| Error::Numerical("singular FITC factor".into()))?;
    let beta = &g * DVector::from_column_slice(y);
    Ok(Core {
        kuu,
        kuf,
        lu,
        v,
        lambda,
        lb,
        g,
        beta,
    })
}

/// FITC log marginal likelihood and its gradient with respect to
/// `(ln σf², ln l, ln σn²)`. `duu` is `M × M`, `duf` is `M × N`.
pub fn fitc_log_likelihood(
    duu: &DMatrix<f64>,
    duf: &DMatrix<f64>,
    y: &[f64],
    hp: &GpHyperparams,
    distance: KernelDistance,
) -> Result<(f64, [f64; 3])> {
    let c = core(duu, duf, y, hp, distance)?;
    let n = y.len();
    let yv = DVector::from_column_slice(y);
    let y_l_y: f64 = y.iter().zip(c.lambda.iter()).map(|(v, l)| v * v / l).sum();
    let log_det = c.lambda.iter().map(|l| l.ln()).sum::<f64>() + 2.0 * c.lb.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let value = -0.5 * (y_l_y - c.beta.norm_squared()) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln();

    // α = (Q + Λ)⁻¹ y, R = K_uu⁻¹ K_uf, P = R (Q + Λ)⁻¹, diag((Q + Λ)⁻¹)
    let mut alpha = c.g.tr_mul(&c.beta);
    for i in 0..n {
        alpha[i] = yv[i] / c.lambda[i] - alpha[i];
    }
    let r = c.lu.tr_solve_lower_triangular(&c.v).ok_or_else(|| Error::Numerical("singular K_uu factor".into()))?;
    let lbt_g = c.lb.tr_solve_lower_triangular(&c.g).ok_or_else(|| Error::Numerical("singular FITC factor".into()))?;
    let p = c.lu.tr_solve_lower_triangular(&lbt_g).ok_or_else(|| Error::Numerical("singular K_uu factor".into()))?;
    let prt = &p * r.transpose();
    let ainv_diag: Vec<f64> = (0..n).map(|i| 1.0 / c.lambda[i] - c.g.column(i).norm_squared()).collect();
    let ra = &r * &alpha;

    let l2 = hp.length_scale * hp.length_scale;
    let mut grad = [0.0; 3];
    for (slot, grad_slot) in grad.iter_mut().enumerate().take(2) {
        // derivatives of K_uu and K_uf; the K_ff diagonal is σf² for a stationary kernel
        let (dkuu, dkuf, dkff) = if slot == 0 {
            (c.kuu.clone(), c.kuf.clone(), hp.sigma_f2)
        } else {
            (
                c.kuu.zip_map(duu, |k, d| k * distance.scaled(d) / l2),
                c.kuf.zip_map(duf, |k, d| k * distance.scaled(d) / l2),
                0.0,
            )
        };
        let dkuu_r = &dkuu * &r;
        let dlambda: Vec<f64> = (0..n)
            .map(|i| {
                let dq: f64 = (0..r.nrows()).map(|m| r[(m, i)] * (2.0 * dkuf[(m, i)] - dkuu_r[(m, i)])).sum();
                dkff - dq
            })
            .collect();
        let quad = 2.0 * (&dkuf * &alpha).dot(&ra) - ra.dot(&(&dkuu * &ra))
            + (0..n).map(|i| alpha[i] * alpha[i] * dlambda[i]).sum::<f64>();
        let trace = 2.0 * p.component_mul(&dkuf).sum() - dkuu.component_mul(&prt).sum()
            + (0..n).map(|i| ainv_diag[i] * dlambda[i]).sum::<f64>();
        *grad_slot = 0.5 * (quad - trace);
    }
    grad[2] = 0.5 * hp.sigma_n2 * (alpha.norm_squared() - ainv_diag.iter().sum::<f64>());
    Ok((value, grad))
}

/// Cached factors for `O(M)` means and `O(M²)` variances.
#[derive(Debug, Clone)]
pub(crate) struct FitcFactors {
    lu: DMatrix<f64>,
    lb: DMatrix<f64>,
    /// `L_u⁻ᵀ L_B⁻ᵀ β`: the predictive mean is `k_*uᵀ c`.
    c: DVector<f64>,
}

impl FitcFactors {
    pub(crate) fn new(
        duu: &DMatrix<f64>,
        duf: &DMatrix<f64>,
        y: &[f64],
        hp: &GpHyperparams,
        distance: KernelDistance,
    ) -> Result<Self> {
        let core = core(duu, duf, y, hp, distance)?;
        let t = core.lb.tr_solve_lower_triangular(&core.beta).ok_or_else(|| Error::Numerical("singular FITC factor".into()))?;
        let c = core.lu.tr_solve_lower_triangular(&t).ok_or_else(|| Error::Numerical("singular K_uu factor".into()))?;
        Ok(Self {
            lu: core.lu,
            lb: core.lb,
            c,
        })
    }

    /// Mean `k_*uᵀ c` and variance `k** − ‖w‖² + ‖L_B⁻¹ w‖²` with `w = L_u⁻¹ k_*u`.
    pub(crate) fn predict(&self, k: &DVector<f64>, kss: f64) -> (f64, f64) {
        let w = self.lu.solve_lower_triangular(k).expect("nonzero diagonal");
        let z = self.lb.solve_lower_triangular(&w).expect("nonzero diagonal");
        (k.dot(&self.c), kss - w.norm_squared() + z.norm_squared())
    }
}
