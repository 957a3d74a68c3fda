//! Contact surfaces and their height functions `z = h(x, y)` (mm, sensor frame).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Sandpaper,
    Silk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// Geometry of a convex contact surface whose apex sits at the sensor origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SurfaceShape {
    Flat,
    Sphere { radius: f64 },
    /// Curved along `curved_along`, straight along the other axis.
    Cylinder { radius: f64, curved_along: Axis },
    /// Ridge along `y` with the given apex angle in degrees.
    Prism { apex_deg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub id: u8,
    pub c1: f64,
    pub c2: f64,
    pub material: Material,
    pub shape: SurfaceShape,
}

pub const CURVATURE_RANGE: (f64, f64) = (0.0, 200.0);

/// Radius in mm of a surface with curvature `c` in m⁻¹.
pub fn radius_mm(c: f64) -> f64 {
    1000.0 / c
}

impl SurfaceSpec {
    pub fn new(id: u8, c1: f64, c2: f64, material: Material, shape: SurfaceShape) -> Result<Self> {
        let (lo, hi) = CURVATURE_RANGE;
        if !(1..=12).contains(&id) {
            return Err(Error::InvalidInput(format!("surface id {id} outside 1..12")));
        }
        if !(lo..=hi).contains(&c1) || !(lo..=hi).contains(&c2) {
            return Err(Error::InvalidInput(format!(
                "curvatures ({c1}, {c2}) outside [{lo}, {hi}] m^-1"
            )));
        }
        Ok(Self {
            id,
            c1,
            c2,
            material,
            shape,
        })
    }

    /// The twelve index-finger surfaces: four spheres, four cylinders, two
    /// triangular prisms, flat sandpaper and flat silk.
    pub fn catalog(id: u8) -> Result<Self> {
        use Material::*;
        let sphere = |c: f64| SurfaceShape::Sphere { radius: radius_mm(c) };
        let cyl = |c: f64, curved_along| SurfaceShape::Cylinder {
            radius: radius_mm(c),
            curved_along,
        };
        let (c1, c2, material, shape) = match id {
            1 => (12.5, 12.5, Sandpaper, sphere(12.5)),
            2 => (25.0, 25.0, Sandpaper, sphere(25.0)),
            3 => (50.0, 50.0, Sandpaper, sphere(50.0)),
            4 => (100.0, 100.0, Sandpaper, sphere(100.0)),
            5 => (25.0, 0.0, Sandpaper, cyl(25.0, Axis::X)),
            6 => (0.0, 25.0, Sandpaper, cyl(25.0, Axis::Y)),
            7 => (100.0, 0.0, Sandpaper, cyl(100.0, Axis::X)),
            8 => (0.0, 100.0, Sandpaper, cyl(100.0, Axis::Y)),
            9 => (0.0, 0.0, Sandpaper, SurfaceShape::Prism { apex_deg: 150.0 }),
            10 => (0.0, 0.0, Sandpaper, SurfaceShape::Prism { apex_deg: 120.0 }),
            11 => (0.0, 0.0, Sandpaper, SurfaceShape::Flat),
            12 => (0.0, 0.0, Silk, SurfaceShape::Flat),
            _ => return Err(Error::InvalidInput(format!("surface id {id} outside 1..12"))),
        };
        Self::new(id, c1, c2, material, shape)
    }

    /// Surface under the thumb in every trial.
    pub fn thumb() -> Self {
        Self::catalog(11).expect("catalog entry 11 exists")
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.shape, SurfaceShape::Flat)
    }

    /// Height `h(x, y)` in mm.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.height_and_gradient(x, y).0
    }

    /// `(h, ∂h/∂x, ∂h/∂y)`. Curved shapes are evaluated inside 99.9% of their
    /// radius; the prism uses the one-sided slope, zero on the ridge.
    pub fn height_and_gradient(&self, x: f64, y: f64) -> (f64, f64, f64) {
        match self.shape {
            SurfaceShape::Flat => (0.0, 0.0, 0.0),
            SurfaceShape::Sphere { radius } => {
                let (s, scale) = cap(x * x + y * y, radius);
                (s - radius, -x * scale / s, -y * scale / s)
            }
            SurfaceShape::Cylinder { radius, curved_along } => match curved_along {
                Axis::X => {
                    let (s, scale) = cap(x * x, radius);
                    (s - radius, -x * scale / s, 0.0)
                }
                Axis::Y => {
                    let (s, scale) = cap(y * y, radius);
                    (s - radius, 0.0, -y * scale / s)
                }
            },
            SurfaceShape::Prism { apex_deg } => {
                let slope = 1.0 / (apex_deg.to_radians() / 2.0).tan();
                let sign = if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (-slope * x.abs(), -slope * sign, 0.0)
            }
        }
    }
}

/// `sqrt(r² - rho2)` with `rho2` limited to 99.9% of `r²`, plus a gradient
/// scale that is zero once the limit is hit.
fn cap(rho2: f64, radius: f64) -> (f64, f64) {
    let limit = 0.999 * radius * radius;
    if rho2 > limit {
        ((radius * radius - limit).sqrt(), 0.0)
    } else {
        ((radius * radius - rho2).sqrt(), 1.0)
    }
}
