//! Box-constrained quasi-Newton minimisation for a handful of parameters.

/// Projected BFGS with Armijo backtracking. `f` returns the value and the
/// gradient, or `None` where the objective cannot be evaluated, which the
/// line search treats as a rejected step. Returns the best point and value.
pub fn minimize_box<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], max_iter: usize, tol: f64) -> Option<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let project = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut fx, mut g) = f(&x)?;
    let mut h = identity(n);
    let mut stalls = 0;
    for _ in 0..max_iter {
        // coordinates pinned at a bound with the gradient pushing outwards stay put
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        let pg: f64 = (0..n).filter(|&i| free[i]).map(|i| g[i] * g[i]).sum::<f64>().sqrt();
        if pg < tol {
            break;
        }
        let mut d = direction(&h, &g, &free);
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            h = identity(n);
            d = direction(&h, &g, &free);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            project(&mut xn);
            let dec: f64 = xn.iter().zip(&x).zip(&g).map(|((a, b), gi)| (a - b) * gi).sum();
            if let Some((fnew, gnew)) = f(&xn) {
                if fnew.is_finite() && fnew <= fx + 1e-4 * dec.min(0.0) {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if is_identity(&h) {
                break;
            }
            h = identity(n);
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            bfgs_update(&mut h, &s, &y, sy);
        }
        let improvement = fx - fnew;
        x = xn;
        fx = fnew;
        g = gnew;
        if improvement.abs() <= tol * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Some((x, fx))
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect()
}

fn is_identity(h: &[Vec<f64>]) -> bool {
    h.iter().enumerate().all(|(i, r)| r.iter().enumerate().all(|(j, &v)| v == f64::from(u8::from(i == j))))
}

fn direction(h: &[Vec<f64>], g: &[f64], free: &[bool]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| {
            if !free[i] {
                return 0.0;
            }
            -(0..n).filter(|&j| free[j]).map(|j| h[i][j] * g[j]).sum::<f64>()
        })
        .collect()
}

/// Inverse-Hessian BFGS update `H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
