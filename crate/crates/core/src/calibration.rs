//! Fingertip ground truth from sensor wrenches: contact-point solving,
//! torque re-referencing, force rotation and marker-orientation search.
//!
//! The torque of a force `f` applied at `p` about the sensor origin is
//! `Δτ = (fz·y − fy·z, −fz·x + fx·z, −fx·y + fy·x)`; the fingertip torque is
//! `τ' = τ − Δτ`.

use nalgebra::{Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surface::SurfaceSpec;
use crate::wrench::{norm3, TargetVector, Wrench};

/// A model mapping a feature vector to a target; used by the marker search.
pub trait Predictor {
    fn predict(&self, features: &[f64]) -> TargetVector;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl ContactPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn on_surface(x: f64, y: f64, surface: &SurfaceSpec) -> Self {
        Self::new(x, y, surface.height(x, y))
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Forces unchanged or rotated, torques re-referenced to the fingertip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedWrench {
    pub f: [f64; 3],
    pub tau_prime: [f64; 3],
    pub timestamp: f64,
}

/// Torque about the sensor origin of `f` applied at `p`.
pub fn torque_shift(f: [f64; 3], p: &ContactPoint) -> [f64; 3] {
    let [fx, fy, fz] = f;
    [
        fz * p.y - fy * p.z,
        -fz * p.x + fx * p.z,
        -fx * p.y + fy * p.x,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactConfig {
    /// Minimum normal force for a well-posed solve (N).
    pub min_fz: f64,
    /// Largest acceptable torque residual (N·mm).
    pub tolerance: f64,
    /// Half-width of the fallback grid search (mm).
    pub search_radius: f64,
    /// Normal force marking contact onset (N).
    pub onset_fz: f64,
    /// How long the onset force must persist (s).
    pub onset_hold: f64,
    /// Force magnitude above which early-contact samples count (N).
    pub early_force: f64,
    /// Number of early-contact samples averaged.
    pub early_samples: usize,
}

impl Default for ContactConfig {
    fn default() -> Self {
        Self {
            min_fz: 0.2,
            tolerance: 0.5,
            search_radius: 15.0,
            onset_fz: 0.1,
            onset_hold: 0.05,
            early_force: 0.2,
            early_samples: 5,
        }
    }
}

fn residual(f: [f64; 3], tau: [f64; 3], x: f64, y: f64, s: &SurfaceSpec) -> Vector3<f64> {
    let d = torque_shift(f, &ContactPoint::on_surface(x, y, s));
    Vector3::new(d[0] - tau[0], d[1] - tau[1], d[2] - tau[2])
}

fn gauss_newton(f: [f64; 3], tau: [f64; 3], s: &SurfaceSpec, start: (f64, f64)) -> (f64, f64, f64) {
    let [fx, fy, fz] = f;
    let (mut x, mut y) = start;
    let mut r = residual(f, tau, x, y, s);
    for _ in 0..100 {
        let (_, hx, hy) = s.height_and_gradient(x, y);
        let j = Matrix3x2::new(-fy * hx, fz - fy * hy, -fz + fx * hx, fx * hy, fy, -fx);
        let jtj = j.transpose() * j;
        let Some(step) = jtj.try_inverse().map(|inv| -(inv * (j.transpose() * r))) else {
            break;
        };
        // backtrack so the residual never grows
        let mut a = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let cand = (x + a * step[0], y + a * step[1]);
            let rc = residual(f, tau, cand.0, cand.1, s);
            if rc.norm() <= r.norm() {
                x = cand.0;
                y = cand.1;
                moved = (a * Vector2::new(step[0], step[1])).norm() > 1e-15;
                r = rc;
                break;
            }
            a *= 0.5;
        }
        if !moved || step.norm() < 1e-13 {
            break;
        }
    }
    (x, y, r.norm())
}

/// Contact point `(x, y, h(x, y))` on the surface consistent with the force
/// `f` and torque shift `dtau`.
pub fn solve_contact(f: [f64; 3], dtau: [f64; 3], surface: &SurfaceSpec, config: &ContactConfig) -> Result<ContactPoint> {
    let fz = f[2];
    if !(fz >= config.min_fz) {
        return Err(Error::IllConditioned {
            fz,
            threshold: config.min_fz,
        });
    }
    // linear solution for the flat case, also the starting point otherwise
    let x0 = -dtau[1] / fz;
    let y0 = dtau[0] / fz;
    let (x, y, res) = if surface.is_flat() {
        (x0, y0, residual(f, dtau, x0, y0, surface).norm())
    } else {
        let (x, y, res) = gauss_newton(f, dtau, surface, (x0, y0));
        if res <= config.tolerance {
            (x, y, res)
        } else {
            grid_fallback(f, dtau, surface, config)
        }
    };
    if !(res <= config.tolerance) {
        return Err(Error::NoConsistentContact {
            residual: res,
            tolerance: config.tolerance,
        });
    }
    Ok(ContactPoint::on_surface(x, y, surface))
}

fn grid_fallback(f: [f64; 3], tau: [f64; 3], s: &SurfaceSpec, config: &ContactConfig) -> (f64, f64, f64) {
    let steps = 60;
    let h = config.search_radius / steps as f64;
    let mut best = (0.0, 0.0, f64::INFINITY);
    for i in -steps..=steps {
        for j in -steps..=steps {
            let (x, y) = (i as f64 * h, j as f64 * h);
            let r = residual(f, tau, x, y, s).norm();
            if r < best.2 {
                best = (x, y, r);
            }
        }
    }
    gauss_newton(f, tau, s, (best.0, best.1))
}

/// `τ' = τ − Δτ(f, p)` for every sample; forces unchanged.
pub fn calibrate_torques(wrenches: &[Wrench], contact: &ContactPoint) -> Vec<CalibratedWrench> {
    wrenches
        .iter()
        .map(|w| {
            let d = torque_shift(w.f, contact);
            CalibratedWrench {
                f: w.f,
                tau_prime: std::array::from_fn(|i| w.tau[i] - d[i]),
                timestamp: w.timestamp,
            }
        })
        .collect()
}

/// Rotates `(fx, fy)` counter-clockwise about `+z` by `θ − θ_r` degrees.
pub fn rotate_forces(f: [f64; 3], theta_deg: f64, theta_r_deg: f64) -> [f64; 3] {
    let (s, c) = (theta_deg - theta_r_deg).to_radians().sin_cos();
    [c * f[0] - s * f[1], s * f[0] + c * f[1], f[2]]
}

/// Index of the first sample with `fz > onset_fz` held for `onset_hold` s.
pub fn contact_onset(wrenches: &[Wrench], config: &ContactConfig) -> Option<usize> {
    const EPS: f64 = 1e-9;
    'start: for k in 0..wrenches.len() {
        if wrenches[k].f[2] <= config.onset_fz {
            continue;
        }
        let t0 = wrenches[k].timestamp;
        let mut covered = false;
        for w in &wrenches[k..] {
            let dt = w.timestamp - t0;
            if dt > config.onset_hold + EPS {
                break;
            }
            if w.f[2] <= config.onset_fz {
                continue 'start;
            }
            covered |= dt >= config.onset_hold - EPS;
        }
        if covered {
            return Some(k);
        }
    }
    None
}

/// Mean force and torque over the first `early_samples` samples after onset
/// whose force magnitude exceeds `early_force`.
pub fn early_contact_wrench(wrenches: &[Wrench], config: &ContactConfig) -> Result<([f64; 3], [f64; 3])> {
    let onset = contact_onset(wrenches, config)
        .ok_or_else(|| Error::NoSignal("no contact onset in force log".into()))?;
    let picked: Vec<&Wrench> = wrenches[onset..]
        .iter()
        .filter(|w| norm3(&w.f) > config.early_force)
        .take(config.early_samples)
        .collect();
    if picked.len() < config.early_samples {
        return Err(Error::NoSignal("too few early-contact samples".into()));
    }
    let n = picked.len() as f64;
    let mut f = [0.0; 3];
    let mut tau = [0.0; 3];
    for w in picked {
        for i in 0..3 {
            f[i] += w.f[i] / n;
            tau[i] += w.tau[i] / n;
        }
    }
    Ok((f, tau))
}

/// Contact point of a trial from its early-contact samples, where the
/// fingertip torque is negligible and `Δτ ≈ τ`.
pub fn trial_contact(wrenches: &[Wrench], surface: &SurfaceSpec, config: &ContactConfig) -> Result<ContactPoint> {
    let (f, tau) = early_contact_wrench(wrenches, config)?;
    solve_contact(f, tau, surface, config)
}

/// Scans marker mounting offsets `−20..=20`° and returns the one whose
/// rotation of the recorded labels best matches the model's force
/// predictions (RMSE over `fx`, `fy`). Ties go to the smallest `|α|`.
pub fn marker_angle_search(features: &[Vec<f64>], labels: &[TargetVector], model: &dyn Predictor) -> Result<i32> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::InvalidInput(
            "marker search needs equally many features and labels".into(),
        ));
    }
    let preds: Vec<TargetVector> = features.iter().map(|x| model.predict(x)).collect();
    let mut best = (0i32, f64::INFINITY);
    let mut order: Vec<i32> = (-20..=20).collect();
    order.sort_by_key(|a| (a.abs(), *a));
    for alpha in order {
        let mut se = 0.0;
        for (p, l) in preds.iter().zip(labels) {
            let r = rotate_forces(l.force(), alpha as f64, 0.0);
            se += (p.0[0] - r[0]).powi(2) + (p.0[1] - r[1]).powi(2);
        }
        let rmse = (se / (2.0 * preds.len() as f64)).sqrt();
        if rmse < best.1 {
            best = (alpha, rmse);
        }
    }
    Ok(best.0)
}
