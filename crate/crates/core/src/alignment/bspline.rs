//! Cubic B-spline control lattices and dense displacement fields.

use serde::{Deserialize, Serialize};

/// Uniform cubic B-spline basis at local coordinate `u ∈ [0, 1)`.
#[inline]
pub fn basis(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    let v = 1.0 - u;
    [
        v * v * v / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

/// Per-pixel lookup along one axis: first control index and the four weights.
#[derive(Debug, Clone)]
pub(crate) struct AxisWeights {
    pub first: Vec<usize>,
    pub w: Vec<[f64; 4]>,
}

impl AxisWeights {
    fn new(len: usize, spacing: f64) -> Self {
        let mut first = Vec::with_capacity(len);
        let mut w = Vec::with_capacity(len);
        for p in 0..len {
            let t = p as f64 / spacing;
            let i = t.floor();
            first.push(i as usize);
            w.push(basis(t - i));
        }
        Self { first, w }
    }
}

/// Control lattice with spacing `spacing` px over an `height × width` canvas.
/// Control node `(i, j)` sits at pixel `((i − 1)·spacing, (j − 1)·spacing)`,
/// so every pixel is covered by a full 4×4 support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    pub height: usize,
    pub width: usize,
    pub spacing: f64,
    pub rows: usize,
    pub cols: usize,
    /// Row displacement per node, row-major.
    pub dy: Vec<f64>,
    /// Column displacement per node, row-major.
    pub dx: Vec<f64>,
}

impl ControlGrid {
    pub fn zeros(height: usize, width: usize, spacing: f64) -> Self {
        assert!(spacing > 0.0, "control spacing must be positive");
        let rows = ((height.max(1) - 1) as f64 / spacing).floor() as usize + 4;
        let cols = ((width.max(1) - 1) as f64 / spacing).floor() as usize + 4;
        Self {
            height,
            width,
            spacing,
            rows,
            cols,
            dy: vec![0.0; rows * cols],
            dx: vec![0.0; rows * cols],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.rows * self.cols
    }

    /// Same displacement `(dy, dx)` at every node.
    pub fn fill(&mut self, dy: f64, dx: f64) {
        self.dy.iter_mut().for_each(|v| *v = dy);
        self.dx.iter_mut().for_each(|v| *v = dx);
    }

    pub fn max_node_displacement(&self) -> f64 {
        self.dy
            .iter()
            .zip(&self.dx)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub(crate) fn weights(&self) -> (AxisWeights, AxisWeights) {
        (
            AxisWeights::new(self.height, self.spacing),
            AxisWeights::new(self.width, self.spacing),
        )
    }

    /// Adds this lattice's displacement to a dense field.
    pub fn accumulate(&self, field: &mut DisplacementField) {
        let (wr, wc) = self.weights();
        for r in 0..self.height {
            let (i0, wy) = (wr.first[r], wr.w[r]);
            for c in 0..self.width {
                let (j0, wx) = (wc.first[c], wc.w[c]);
                let mut sy = 0.0;
                let mut sx = 0.0;
                for a in 0..4 {
                    let base = (i0 + a) * self.cols + j0;
                    let mut ry = 0.0;
                    let mut rx = 0.0;
                    for b in 0..4 {
                        ry += wx[b] * self.dy[base + b];
                        rx += wx[b] * self.dx[base + b];
                    }
                    sy += wy[a] * ry;
                    sx += wy[a] * rx;
                }
                let k = r * self.width + c;
                field.dy[k] += sy;
                field.dx[k] += sx;
            }
        }
    }

    /// Adjoint of [`accumulate`](Self::accumulate): pulls per-pixel gradients
    /// back onto the nodes. Returns `(∂/∂dy, ∂/∂dx)` per node.
    pub(crate) fn scatter(&self, gy: &[f64], gx: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (wr, wc) = self.weights();
        let mut ny = vec![0.0; self.n_nodes()];
        let mut nx = vec![0.0; self.n_nodes()];
        for r in 0..self.height {
            let (i0, wy) = (wr.first[r], wr.w[r]);
            for c in 0..self.width {
                let k = r * self.width + c;
                let (py, px) = (gy[k], gx[k]);
                if py == 0.0 && px == 0.0 {
                    continue;
                }
                let (j0, wx) = (wc.first[c], wc.w[c]);
                for a in 0..4 {
                    let base = (i0 + a) * self.cols + j0;
                    for b in 0..4 {
                        let wab = wy[a] * wx[b];
                        ny[base + b] += wab * py;
                        nx[base + b] += wab * px;
                    }
                }
            }
        }
        (ny, nx)
    }

    pub fn field(&self) -> DisplacementField {
        let mut f = DisplacementField::zeros(self.height, self.width);
        self.accumulate(&mut f);
        f
    }
}

/// Dense per-pixel displacement `(dy, dx)`; pixel `p` samples the moving
/// image at `p + d(p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    pub height: usize,
    pub width: usize,
    pub dy: Vec<f64>,
    pub dx: Vec<f64>,
}

impl DisplacementField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            dy: vec![0.0; height * width],
            dx: vec![0.0; height * width],
        }
    }

    pub fn max_magnitude(&self) -> f64 {
        self.dy
            .iter()
            .zip(&self.dx)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub fn scale(&mut self, s: f64) {
        self.dy.iter_mut().for_each(|v| *v *= s);
        self.dx.iter_mut().for_each(|v| *v *= s);
    }

    /// Bilinear sample of the field at a sub-pixel position, edge-clamped.
    pub fn sample(&self, y: f64, x: f64) -> (f64, f64) {
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let (r0, c0) = (y.floor() as usize, x.floor() as usize);
        let (r1, c1) = ((r0 + 1).min(self.height - 1), (c0 + 1).min(self.width - 1));
        let (fy, fx) = (y - r0 as f64, x - c0 as f64);
        let at = |v: &[f64]| {
            let top = v[r0 * self.width + c0] * (1.0 - fx) + v[r0 * self.width + c1] * fx;
            let bot = v[r1 * self.width + c0] * (1.0 - fx) + v[r1 * self.width + c1] * fx;
            top * (1.0 - fy) + bot * fy
        };
        (at(&self.dy), at(&self.dx))
    }

    /// Field `u` with `u(p) = −d(p + u(p))`, so that warping by `d` and then
    /// by `u` returns to the start. Solved by fixed-point iteration.
    pub fn inverse(&self, iterations: usize) -> DisplacementField {
        let mut inv = DisplacementField::zeros(self.height, self.width);
        for _ in 0..iterations {
            let mut next = DisplacementField::zeros(self.height, self.width);
            for r in 0..self.height {
                for c in 0..self.width {
                    let k = r * self.width + c;
                    let (dy, dx) =
                        self.sample(r as f64 + inv.dy[k], c as f64 + inv.dx[k]);
                    next.dy[k] = -dy;
                    next.dx[k] = -dx;
                }
            }
            inv = next;
        }
        inv
    }
}
