//! Non-rigid registration of a moving image `J` onto a reference `R` with an
//! additive intensity correction `v`:
//!
//! `E(T, v) = ‖R − J(T) − v‖² + w ‖L v‖²`
//!
//! `T` is a three-level hierarchy of cubic B-spline lattices, `L` the graph
//! Laplacian. For a fixed `T` the optimal `v` solves `(I + w L²) v = R − J(T)`
//! exactly, so the optimiser runs gradient descent on `T` with `v` eliminated.

pub mod bspline;
pub mod regularize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{ImageFrame, BLUE, CANONICAL_SIZE};
pub use bspline::{ControlGrid, DisplacementField};
use regularize::SmoothSolver;

/// Three hierarchical control lattices, coarse to fine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfdTransform {
    pub levels: Vec<ControlGrid>,
}

impl FfdTransform {
    pub fn identity(height: usize, width: usize, spacings: [f64; 3]) -> Self {
        Self {
            levels: spacings
                .iter()
                .map(|&s| ControlGrid::zeros(height, width, s))
                .collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.levels[0].height
    }

    pub fn width(&self) -> usize {
        self.levels[0].width
    }

    /// Total displacement of all levels.
    pub fn field(&self) -> DisplacementField {
        let mut f = DisplacementField::zeros(self.height(), self.width());
        for l in &self.levels {
            l.accumulate(&mut f);
        }
        f
    }

    pub fn max_control_displacement(&self) -> f64 {
        self.levels
            .iter()
            .map(ControlGrid::max_node_displacement)
            .fold(0.0, f64::max)
    }

    /// All node displacements, per level `dy` then `dx`.
    pub fn params(&self) -> Vec<f64> {
        self.levels
            .iter()
            .flat_map(|l| l.dy.iter().chain(&l.dx).copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut k = 0;
        for l in &mut self.levels {
            let n = l.n_nodes();
            l.dy.copy_from_slice(&p[k..k + n]);
            l.dx.copy_from_slice(&p[k + n..k + 2 * n]);
            k += 2 * n;
        }
    }
}

/// Additive per-pixel intensity correction on the reference canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityCorrection {
    pub height: usize,
    pub width: usize,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    /// 4-neighbour graph Laplacian with reflecting borders.
    Laplacian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    /// Regularisation weight on `‖L v‖²`.
    pub w: f64,
    pub penalty: Penalty,
    /// Control spacing per level in px, coarse to fine.
    pub spacings: [f64; 3],
    pub max_iter: [usize; 3],
    /// Optional Gaussian pre-blur (px) of both images per level.
    pub blur_sigmas: [f64; 3],
    /// Relative energy decrease below which a level stops.
    pub tolerance: f64,
    pub max_backtracks: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Initial step chosen so the first trial moves a node by at most this many px.
    pub initial_move_px: f64,
    /// Channel used for estimation when the frames carry colour.
    pub channel: usize,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            w: 1000.0,
            penalty: Penalty::Laplacian,
            spacings: [32.0, 16.0, 8.0],
            max_iter: [100, 100, 100],
            blur_sigmas: [0.0; 3],
            tolerance: 1e-7,
            max_backtracks: 30,
            armijo: 1e-4,
            initial_move_px: 0.5,
            channel: BLUE,
        }
    }
}

impl AlignmentConfig {
    /// Defaults with control spacings scaled to a canvas of the given height.
    pub fn for_canvas(height: usize) -> Self {
        let s = height as f64 / CANONICAL_SIZE.0 as f64;
        let mut c = Self::default();
        c.spacings = c.spacings.map(|v| (v * s).round().max(2.0));
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w >= 0.0) {
            return Err(Error::Config(format!("alignment weight w = {} must be ≥ 0", self.w)));
        }
        if self.spacings.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("control spacings must be positive".into()));
        }
        Ok(())
    }
}

/// Zero-padded bilinear sample with its spatial derivatives `(v, ∂v/∂y, ∂v/∂x)`.
/// On grid lines, where the bilinear surface has a kink, the derivative is
/// the mean of the one-sided ones.
#[inline]
fn sample(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> (f64, f64, f64) {
    if !(y > -2.0 && y < h as f64 + 1.0 && x > -2.0 && x < w as f64 + 1.0) {
        return (0.0, 0.0, 0.0);
    }
    let yf = y.floor();
    let xf = x.floor();
    let (fy, fx) = (y - yf, x - xf);
    let (r0, c0) = (yf as isize, xf as isize);
    let at = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            plane[r as usize * w + c as usize]
        }
    };
    let row = |r: isize| (1.0 - fx) * at(r, c0) + fx * at(r, c0 + 1);
    let col = |c: isize| (1.0 - fy) * at(r0, c) + fy * at(r0 + 1, c);
    let (top, bot) = (row(r0), row(r0 + 1));
    let value = (1.0 - fy) * top + fy * bot;
    let dy = if fy == 0.0 { 0.5 * (bot - row(r0 - 1)) } else { bot - top };
    let dx = if fx == 0.0 { 0.5 * (col(c0 + 1) - col(c0 - 1)) } else { col(c0 + 1) - col(c0) };
    (value, dy, dx)
}

/// Backward warp of one plane: `out(p) = J(p + d(p))`, zero outside the canvas.
pub fn warp_plane(plane: &[f64], field: &DisplacementField) -> Vec<f64> {
    let (h, w) = (field.height, field.width);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let k = r * w + c;
            out.push(sample(plane, h, w, r as f64 + field.dy[k], c as f64 + field.dx[k]).0);
        }
    }
    out
}

/// Warps every channel of `image` by `t`.
pub fn warp(image: &ImageFrame, t: &FfdTransform) -> Result<ImageFrame> {
    warp_by_field(image, &t.field())
}

pub fn warp_by_field(image: &ImageFrame, field: &DisplacementField) -> Result<ImageFrame> {
    if image.height() != field.height || image.width() != field.width {
        return Err(Error::InvalidInput(format!(
            "transform canvas {}x{} does not match image {}x{}",
            field.height,
            field.width,
            image.height(),
            image.width()
        )));
    }
    let planes: Vec<Vec<f64>> = image.planes().iter().map(|p| warp_plane(p, field)).collect();
    let mut out = ImageFrame::from_planes(image.height(), image.width(), &planes, image.timestamp)?;
    out.timestamp = image.timestamp;
    Ok(out)
}

/// Energy value with gradients.
#[derive(Debug, Clone)]
pub struct EnergyEval {
    pub energy: f64,
    /// Gradient with respect to [`FfdTransform::params`].
    pub grad_t: Vec<f64>,
    pub grad_v: Vec<f64>,
}

/// `E(T, v)` for explicit `v`, with analytic gradients.
pub fn energy(r: &[f64], j: &[f64], t: &FfdTransform, v: &[f64], w: f64) -> Result<EnergyEval> {
    let (h, wd) = (t.height(), t.width());
    let n = h * wd;
    if r.len() != n || j.len() != n || v.len() != n {
        return Err(Error::InvalidInput("energy inputs must share the transform canvas".into()));
    }
    let field = t.field();
    let mut e = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut gx = vec![0.0; n];
    for row in 0..h {
        for col in 0..wd {
            let k = row * wd + col;
            let (val, dy, dx) = sample(j, h, wd, row as f64 + field.dy[k], col as f64 + field.dx[k]);
            e[k] = r[k] - val - v[k];
            gy[k] = -2.0 * e[k] * dy;
            gx[k] = -2.0 * e[k] * dx;
        }
    }
    let lv = regularize::laplacian(v, h, wd);
    let llv = regularize::laplacian(&lv, h, wd);
    let energy = e.iter().map(|x| x * x).sum::<f64>() + w * lv.iter().map(|x| x * x).sum::<f64>();
    let grad_v = (0..n).map(|k| -2.0 * e[k] + 2.0 * w * llv[k]).collect();
    let mut grad_t = Vec::with_capacity(t.params().len());
    for level in &t.levels {
        let (ny, nx) = level.scatter(&gy, &gx);
        grad_t.extend(ny);
        grad_t.extend(nx);
    }
    Ok(EnergyEval {
        energy,
        grad_t,
        grad_v,
    })
}

#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub transform: FfdTransform,
    pub correction: IntensityCorrection,
    pub aligned: ImageFrame,
    /// Energy at the start and after every accepted step.
    pub trace: Vec<f64>,
}

/// Energy with `v` eliminated, for the optimiser.
struct Problem<'a> {
    r: &'a [f64],
    j: &'a [f64],
    h: usize,
    w: usize,
    weight: f64,
    solver: SmoothSolver,
}

struct Reduced {
    energy: f64,
    v: Vec<f64>,
    gy: Vec<f64>,
    gx: Vec<f64>,
}

impl Problem<'_> {
    fn eval(&self, field: &DisplacementField, want_grad: bool) -> Reduced {
        let n = self.h * self.w;
        let mut res = vec![0.0; n];
        let mut dys = if want_grad { vec![0.0; n] } else { Vec::new() };
        let mut dxs = if want_grad { vec![0.0; n] } else { Vec::new() };
        for row in 0..self.h {
            for col in 0..self.w {
                let k = row * self.w + col;
                let (val, dy, dx) =
                    sample(self.j, self.h, self.w, row as f64 + field.dy[k], col as f64 + field.dx[k]);
                res[k] = self.r[k] - val;
                if want_grad {
                    dys[k] = dy;
                    dxs[k] = dx;
                }
            }
        }
        let v = self.solver.solve(&res);
        let mut energy = self.weight * regularize::penalty(&v, self.h, self.w);
        let mut gy = Vec::new();
        let mut gx = Vec::new();
        if want_grad {
            gy = vec![0.0; n];
            gx = vec![0.0; n];
        }
        for k in 0..n {
            let e = res[k] - v[k];
            energy += e * e;
            if want_grad {
                gy[k] = -2.0 * e * dys[k];
                gx[k] = -2.0 * e * dxs[k];
            }
        }
        Reduced { energy, v, gy, gx }
    }
}

fn gaussian_blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; h * w];
        for r in 0..h as isize {
            for c in 0..w as isize {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (t, kv) in (-radius..=radius).zip(&kernel) {
                    let (rr, cc) = if horizontal { (r, c + t) } else { (r + t, c) };
                    if rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize {
                        acc += kv * src[rr as usize * w + cc as usize];
                        norm += kv;
                    }
                }
                out[r as usize * w + c as usize] = acc / norm;
            }
        }
        out
    };
    pass(&pass(plane, true), false)
}

fn estimation_plane(frame: &ImageFrame, channel: usize) -> Vec<f64> {
    frame.plane(if frame.channels() == 1 { 0 } else { channel })
}

/// Registers `moving` onto `reference` and applies the transform to every
/// channel of `moving`.
pub fn align(reference: &ImageFrame, moving: &ImageFrame, config: &AlignmentConfig) -> Result<AlignmentResult> {
    align_from(reference, moving, config, None)
}

/// [`align`] started from an initial transform, e.g. the previous frame's.
pub fn align_from(
    reference: &ImageFrame,
    moving: &ImageFrame,
    config: &AlignmentConfig,
    init: Option<&FfdTransform>,
) -> Result<AlignmentResult> {
    config.validate()?;
    let (h, w) = (reference.height(), reference.width());
    if moving.height() != h || moving.width() != w {
        return Err(Error::InvalidInput("reference and moving frames differ in size".into()));
    }
    let r = estimation_plane(reference, config.channel);
    let j = estimation_plane(moving, config.channel);
    let (transform, correction, trace) = align_planes(&r, &j, h, w, config, init)?;
    let aligned = warp(moving, &transform)?;
    Ok(AlignmentResult {
        transform,
        correction,
        aligned,
        trace,
    })
}

/// Core optimiser on single planes. Returns transform, correction and trace.
pub fn align_planes(
    r: &[f64],
    j: &[f64],
    h: usize,
    w: usize,
    config: &AlignmentConfig,
    init: Option<&FfdTransform>,
) -> Result<(FfdTransform, IntensityCorrection, Vec<f64>)> {
    config.validate()?;
    let mut t = match init {
        Some(t0) if t0.height() == h && t0.width() == w && t0.levels.len() == 3 => t0.clone(),
        Some(_) => return Err(Error::InvalidInput("initial transform canvas mismatch".into())),
        None => FfdTransform::identity(h, w, config.spacings),
    };
    let solver = SmoothSolver::new(h, w, config.w);
    let mut trace: Vec<f64> = Vec::new();
    let fail = |reason: &str, trace: &Vec<f64>| Error::AlignmentFailed {
        reason: reason.to_string(),
        trace: trace.clone(),
    };

    for level in 0..t.levels.len() {
        let (rb, jb);
        let (rp, jp) = if config.blur_sigmas[level] > 0.0 {
            rb = gaussian_blur(r, h, w, config.blur_sigmas[level]);
            jb = gaussian_blur(j, h, w, config.blur_sigmas[level]);
            (&rb[..], &jb[..])
        } else {
            (r, j)
        };
        let problem = Problem {
            r: rp,
            j: jp,
            h,
            w,
            weight: config.w,
            solver: solver.clone(),
        };
        // displacement of the other levels stays fixed while this one moves
        let mut fixed = DisplacementField::zeros(h, w);
        for (l, grid) in t.levels.iter().enumerate() {
            if l != level {
                grid.accumulate(&mut fixed);
            }
        }
        let field_of = |grid: &ControlGrid| {
            let mut f = fixed.clone();
            grid.accumulate(&mut f);
            f
        };

        let mut grid = t.levels[level].clone();
        let mut cur = problem.eval(&field_of(&grid), true);
        if !cur.energy.is_finite() {
            return Err(fail("non-finite energy", &trace));
        }
        if level == 0 || config.blur_sigmas[level] > 0.0 || trace.is_empty() {
            trace.push(cur.energy);
        }
        let mut grad = node_gradient(&grid, &cur);
        let mut step = {
            let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gmax > 0.0 {
                config.initial_move_px / gmax
            } else {
                0.0
            }
        };
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;

        for _ in 0..config.max_iter[level] {
            let g2: f64 = grad.iter().map(|g| g * g).sum();
            if g2 == 0.0 || cur.energy == 0.0 {
                break;
            }
            let x0 = grid_params(&grid);
            if let Some((px, pg)) = &prev {
                // Barzilai-Borwein step from the last accepted move
                let (mut ss, mut sy) = (0.0, 0.0);
                for k in 0..x0.len() {
                    let s = x0[k] - px[k];
                    ss += s * s;
                    sy += s * (grad[k] - pg[k]);
                }
                if sy > 0.0 && ss > 0.0 {
                    step = ss / sy;
                } else {
                    step *= 2.0;
                }
            }
            let mut accepted = None;
            let mut a = step;
            for _ in 0..=config.max_backtracks {
                let trial: Vec<f64> = x0.iter().zip(&grad).map(|(x, g)| x - a * g).collect();
                let mut cand = grid.clone();
                set_grid_params(&mut cand, &trial);
                let e = problem.eval(&field_of(&cand), false).energy;
                if !e.is_finite() {
                    a *= 0.5;
                    continue;
                }
                if e <= cur.energy - config.armijo * a * g2 {
                    accepted = Some((cand, a));
                    break;
                }
                a *= 0.5;
            }
            let Some((cand, a)) = accepted else {
                break; // no sufficient decrease left at this level
            };
            step = a;
            let next = problem.eval(&field_of(&cand), true);
            if !next.energy.is_finite() {
                return Err(fail("non-finite energy", &trace));
            }
            let decrease = cur.energy - next.energy;
            prev = Some((x0, grad));
            grid = cand;
            cur = next;
            grad = node_gradient(&grid, &cur);
            trace.push(cur.energy);
            if decrease <= config.tolerance * trace[0].max(f64::MIN_POSITIVE) {
                break;
            }
        }
        t.levels[level] = grid;
        if level + 1 == t.levels.len() {
            let final_eval = Problem {
                r,
                j,
                h,
                w,
                weight: config.w,
                solver: solver.clone(),
            }
            .eval(&t.field(), false);
            let correction = IntensityCorrection {
                height: h,
                width: w,
                v: final_eval.v,
            };
            if correction.v.iter().any(|x| !x.is_finite()) {
                return Err(fail("non-finite intensity correction", &trace));
            }
            return Ok((t, correction, trace));
        }
    }
    unreachable!("transform always has levels")
}

fn node_gradient(grid: &ControlGrid, eval: &Reduced) -> Vec<f64> {
    let (ny, nx) = grid.scatter(&eval.gy, &eval.gx);
    ny.into_iter().chain(nx).collect()
}

fn grid_params(g: &ControlGrid) -> Vec<f64> {
    g.dy.iter().chain(&g.dx).copied().collect()
}

fn set_grid_params(g: &mut ControlGrid, p: &[f64]) {
    let n = g.n_nodes();
    g.dy.copy_from_slice(&p[..n]);
    g.dx.copy_from_slice(&p[n..]);
}
