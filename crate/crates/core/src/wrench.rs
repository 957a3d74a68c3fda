//! Forces, torques and regression targets.
//!
//! Coordinates are per finger: `x` is the lift direction, `z` the surface
//! normal (grip) direction and `y` completes a right-handed frame. Forces are
//! in N, torques in N·mm, curvatures in m⁻¹.

use serde::{Deserialize, Serialize};

/// A force/torque sample in sensor coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub f: [f64; 3],
    pub tau: [f64; 3],
    pub timestamp: f64,
}

impl Wrench {
    pub fn new(f: [f64; 3], tau: [f64; 3], timestamp: f64) -> Self {
        Self { f, tau, timestamp }
    }

    pub fn zero(timestamp: f64) -> Self {
        Self::new([0.0; 3], [0.0; 3], timestamp)
    }

    pub fn is_finite(&self) -> bool {
        self.f.iter().chain(self.tau.iter()).all(|v| v.is_finite())
    }

    pub fn force_norm(&self) -> f64 {
        norm3(&self.f)
    }

    /// Linear blend `self + t (other - self)` of forces, torques and time.
    pub fn lerp(&self, other: &Wrench, t: f64) -> Wrench {
        let mix = |a: f64, b: f64| a + t * (b - a);
        Wrench {
            f: std::array::from_fn(|i| mix(self.f[i], other.f[i])),
            tau: std::array::from_fn(|i| mix(self.tau[i], other.tau[i])),
            timestamp: mix(self.timestamp, other.timestamp),
        }
    }
}

pub(crate) fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Index of each regression output inside a [`TargetVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    Fx,
    Fy,
    Fz,
    Tx,
    Ty,
    Tz,
    C1,
    C2,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::Fx,
        Component::Fy,
        Component::Fz,
        Component::Tx,
        Component::Ty,
        Component::Tz,
        Component::C1,
        Component::C2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::Fx => "fx",
            Component::Fy => "fy",
            Component::Fz => "fz",
            Component::Tx => "tx",
            Component::Ty => "ty",
            Component::Tz => "tz",
            Component::C1 => "c1",
            Component::C2 => "c2",
        }
    }

    /// Observed data range `[lo, hi]` for this component.
    pub fn range(self) -> (f64, f64) {
        match self {
            Component::Fx => (-0.9, 4.0),
            Component::Fy => (-2.0, 0.8),
            Component::Fz => (0.0, 15.0),
            Component::Tx => (-22.0, 26.0),
            Component::Ty => (-30.0, 14.0),
            Component::Tz => (-35.0, 27.0),
            Component::C1 | Component::C2 => (0.0, 200.0),
        }
    }
}

/// Regression label `{fx, fy, fz, τx, τy, τz, c1, c2}`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TargetVector(pub [f64; 8]);

impl TargetVector {
    pub fn new(f: [f64; 3], tau: [f64; 3], c1: f64, c2: f64) -> Self {
        Self([f[0], f[1], f[2], tau[0], tau[1], tau[2], c1, c2])
    }

    pub fn get(&self, c: Component) -> f64 {
        self.0[c.index()]
    }

    pub fn set(&mut self, c: Component, v: f64) {
        self.0[c.index()] = v;
    }

    pub fn force(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn torque(&self) -> [f64; 3] {
        [self.0[3], self.0[4], self.0[5]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// A component found outside its observed data range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeFlag {
    pub component: Component,
    pub value: f64,
    pub range: (f64, f64),
}

/// Lists the components of `t` that fall outside the observed data ranges.
/// Advisory only; the target is never modified.
pub fn validate_ranges(t: &TargetVector) -> Vec<RangeFlag> {
    Component::ALL
        .iter()
        .filter_map(|&c| {
            let (lo, hi) = c.range();
            let v = t.get(c);
            (!(lo..=hi).contains(&v)).then_some(RangeFlag {
                component: c,
                value: v,
                range: (lo, hi),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fz_boundary() {
        let mut t = TargetVector::default();
        t.set(Component::Fz, 15.0);
        assert!(validate_ranges(&t).is_empty());
        t.set(Component::Fz, 16.0);
        let flags = validate_ranges(&t);
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].component, Component::Fz);
    }

    #[test]
    fn zero_vector_is_in_range() {
        assert!(validate_ranges(&TargetVector::default()).is_empty());
    }

    #[test]
    fn nan_is_flagged() {
        let mut t = TargetVector::default();
        t.set(Component::C2, f64::NAN);
        assert_eq!(validate_ranges(&t)[0].component, Component::C2);
    }

    #[test]
    fn ordering_is_fixed() {
        let t = TargetVector::new([1.0, 2.0, 3.0], [4.0, 5.0, 6.0], 7.0, 8.0);
        for (i, c) in Component::ALL.iter().enumerate() {
            assert_eq!(t.get(*c), (i + 1) as f64);
        }
    }
}
