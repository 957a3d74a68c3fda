//! Grasp-and-lift force profiles.
//!
//! Grip `G(t)` (normal force, shared by both fingers) and load `L(t) = m g λ(t)`
//! follow smoothstep segments between knots placed at the phase boundaries.
//! The index finger carries a share `s` of the load and the thumb `1 − s`, so
//! during the static phase the lift forces sum to exactly `m g`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surface::Material;
use crate::trial::Finger;

pub const PHASES: [&str; 9] = [
    "reach",
    "preload",
    "loading",
    "transitional",
    "static",
    "replacement",
    "delay",
    "pre-unload",
    "unloading",
];

/// Nominal phase durations in seconds; each trial draws within ±20%.
pub const NOMINAL_PHASE_S: [f64; 9] = [0.4, 0.25, 0.45, 0.35, 1.2, 0.5, 0.35, 0.3, 0.45];

/// Grip relative to per-finger load share during the static phase.
pub fn grip_ratio(material: Material) -> f64 {
    match material {
        Material::Sandpaper => 1.8,
        Material::Silk => 3.9,
    }
}

/// Knot values `(grip / static grip, λ)` at phase boundaries; the extra knot
/// in the middle of the transitional phase carries the lift-off overshoot.
const GRIP_OVERSHOOT: f64 = 1.12;
const LOAD_OVERSHOOT: f64 = 1.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspProfile {
    /// Phase boundaries on the force clock, `bounds[k]..bounds[k+1]` is phase `k`.
    pub bounds: [f64; 10],
    pub weight_kg: f64,
    pub gravity: f64,
    /// Static grip force (N).
    pub static_grip: f64,
    /// Index finger share of the load.
    pub index_share: f64,
    /// `fy = β fx` per finger (thumb, index).
    pub beta: [f64; 2],
    /// Fingertip torque `τ' = C (fx, fy)` per finger, mm.
    pub torque_gain: [[[f64; 2]; 3]; 2],
    knots: Vec<(f64, f64, f64)>,
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

impl GraspProfile {
    /// Draws a profile starting at `start` on the force clock.
    pub fn sample<R: Rng>(
        rng: &mut R,
        start: f64,
        weight_g: u32,
        index_material: Material,
        gravity: f64,
    ) -> Self {
        let mut bounds = [0.0; 10];
        bounds[0] = start;
        for k in 0..9 {
            bounds[k + 1] = bounds[k] + NOMINAL_PHASE_S[k] * rng.random_range(0.8..=1.2);
        }
        let weight_kg = weight_g as f64 / 1000.0;
        let load = weight_kg * gravity;
        // the more slippery contact sets the grip
        let ratio = grip_ratio(index_material) * rng.random_range(0.96..=1.04);
        let static_grip = ratio * load / 2.0;
        let index_share = rng.random_range(0.42..=0.58);
        let beta = [rng.random_range(-0.25..=0.15), rng.random_range(-0.25..=0.15)];
        let mut torque_gain = [[[0.0; 2]; 3]; 2];
        for f in &mut torque_gain {
            for row in f.iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.random_range(-2.5..=2.5);
                }
            }
        }
        let b = bounds;
        let knots = vec![
            (b[0], 0.0, 0.0),
            (b[1], 0.0, 0.0),
            (b[2], 0.25, 0.0),
            (b[3], 1.0, 1.0),
            (0.5 * (b[3] + b[4]), GRIP_OVERSHOOT, LOAD_OVERSHOOT),
            (b[4], 1.0, 1.0),
            (b[5], 1.0, 1.0),
            (b[6], 0.97, 1.0),
            (b[7], 0.8, 0.35),
            (b[8], 0.45, 0.0),
            (b[9], 0.0, 0.0),
        ];
        Self {
            bounds,
            weight_kg,
            gravity,
            static_grip,
            index_share,
            beta,
            torque_gain,
            knots,
        }
    }

    /// Total span of the profile if every phase took its longest duration.
    pub fn max_span() -> f64 {
        1.2 * NOMINAL_PHASE_S.iter().sum::<f64>()
    }

    fn knot_values(&self, t: f64) -> (f64, f64) {
        let k = &self.knots;
        if t <= k[0].0 || t >= k[k.len() - 1].0 {
            return (0.0, 0.0);
        }
        let i = k.partition_point(|kn| kn.0 <= t) - 1;
        let (t0, g0, l0) = k[i];
        let (t1, g1, l1) = k[i + 1];
        if g0 == g1 && l0 == l1 {
            return (g0, l0);
        }
        let s = smoothstep((t - t0) / (t1 - t0));
        (g0 + (g1 - g0) * s, l0 + (l1 - l0) * s)
    }

    /// Normal force of both fingers (N).
    pub fn grip(&self, t: f64) -> f64 {
        self.static_grip * self.knot_values(t).0
    }

    /// Total lift force (N).
    pub fn load(&self, t: f64) -> f64 {
        self.weight_kg * self.gravity * self.knot_values(t).1
    }

    fn share(&self, finger: Finger) -> f64 {
        match finger {
            Finger::Index => self.index_share,
            Finger::Thumb => 1.0 - self.index_share,
        }
    }

    /// Fingertip force in the finger frame.
    pub fn tip_force(&self, finger: Finger, t: f64) -> [f64; 3] {
        let (g, l) = self.knot_values(t);
        let fx = self.share(finger) * self.weight_kg * self.gravity * l;
        let fy = self.beta[finger as usize] * fx;
        [fx, fy, self.static_grip * g]
    }

    /// Fingertip torque, linear in the tangential force.
    pub fn tip_torque(&self, finger: Finger, t: f64) -> [f64; 3] {
        let f = self.tip_force(finger, t);
        let c = &self.torque_gain[finger as usize];
        std::array::from_fn(|i| c[i][0] * f[0] + c[i][1] * f[1])
    }

    /// From the start of preload to the end of unloading.
    pub fn contact_window(&self) -> (f64, f64) {
        (self.bounds[1], self.bounds[9])
    }

    pub fn static_window(&self) -> (f64, f64) {
        (self.bounds[4], self.bounds[5])
    }

    pub fn end(&self) -> f64 {
        self.bounds[9]
    }
}

/// Checks that the longest possible profile fits the trial.
pub fn check_feasible(duration: f64, lead: f64) -> Result<()> {
    let need = lead + GraspProfile::max_span();
    if need > duration {
        return Err(Error::Config(format!(
            "trial duration {duration} s cannot hold the nine grasp phases (needs {need:.2} s)"
        )));
    }
    Ok(())
}
