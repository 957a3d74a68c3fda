//! Synthetic fingernail appearance.
//!
//! A participant style fixes the finger/nail template and a set of response
//! zones. Each target component drives one Gaussian zone; the zone sum `s`
//! shifts the red and green channels in logit space:
//! `I = b + σ(logit b + s) − σ(logit b)`, which returns the template exactly
//! at `s = 0` and stays inside `(0, 1)`. Blue carries a force-independent
//! texture used for registration.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::alignment::DisplacementField;
use crate::frame::{ImageFrame, BLUE, GREEN, RED};
use crate::imaging::{hsv_to_rgb_pixel, Mask};
use crate::wrench::TargetVector;

/// Normalising scale per target component before it enters the colour map.
pub const TARGET_SCALE: [f64; 8] = [4.0, 2.0, 15.0, 30.0, 30.0, 30.0, 200.0, 200.0];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Smooth inside-indicator of an ellipse, ≈1 inside, ≈0 outside, with an
/// edge ramp of roughly `edge` pixels.
fn ellipse_weight(y: f64, x: f64, center: (f64, f64), axes: (f64, f64), edge: f64) -> f64 {
    let dy = (y - center.0) / axes.0;
    let dx = (x - center.1) / axes.1;
    let rho = (dy * dy + dx * dx).sqrt();
    // signed distance to the boundary in px, approximately
    let dist = (1.0 - rho) * axes.0.min(axes.1);
    sigmoid(dist / edge)
}

/// A Gaussian bump in normalised canvas coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// `(row, col)` as fractions of the canvas height and width.
    pub center: (f64, f64),
    /// Standard deviation as a fraction of the canvas height.
    pub sigma: f64,
    pub amplitude: f64,
}

impl Blob {
    fn at(&self, y: f64, x: f64, h: f64, w: f64) -> f64 {
        let dy = y / h - self.center.0;
        let dx = (x / w - self.center.1) * (w / h);
        self.amplitude * (-(dy * dy + dx * dx) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Per-participant appearance: template geometry, palette and colour map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NailStyle {
    pub finger_center: (f64, f64),
    pub finger_axes: (f64, f64),
    pub nail_center: (f64, f64),
    pub nail_axes: (f64, f64),
    /// Edge ramp width as a fraction of the canvas height.
    pub edge: f64,
    pub background_rgb: [f64; 3],
    pub skin_rgb: [f64; 3],
    pub nail_rgb: [f64; 3],
    /// Force-independent blue texture.
    pub texture: Vec<Blob>,
    /// One zone per target component; `amplitude` is the green gain in logit units.
    pub zones: Vec<Blob>,
    /// Red gain relative to green per zone.
    pub red_ratio: Vec<f64>,
    /// Global multiplicative lighting gain.
    pub gain: f64,
}

impl NailStyle {
    /// Draws a participant style.
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let mut u = |a: f64, b: f64| rng.random_range(a..=b);
        let finger_center = (0.5 + u(-0.03, 0.03), 0.5 + u(-0.03, 0.03));
        let finger_axes = (u(0.36, 0.40), u(0.32, 0.36));
        let nail_center = (finger_center.0 - u(0.06, 0.1), finger_center.1 + u(-0.02, 0.02));
        let nail_axes = (u(0.2, 0.24), u(0.2, 0.24));
        let background_rgb = hsv_to_rgb_pixel(35.0 + u(-5.0, 5.0), 0.06, u(0.4, 0.5));
        let skin_rgb = hsv_to_rgb_pixel(10.0 + u(-3.0, 3.0), u(0.5, 0.58), u(0.68, 0.76));
        let nail_rgb = hsv_to_rgb_pixel(358.0 + u(-3.0, 3.0), u(0.36, 0.42), u(0.8, 0.86));

        let mut texture = Vec::new();
        for _ in 0..16 {
            texture.push(Blob {
                center: (
                    finger_center.0 + u(-0.8, 0.8) * finger_axes.0,
                    finger_center.1 + u(-0.8, 0.8) * finger_axes.1,
                ),
                sigma: u(0.04, 0.08),
                amplitude: u(-0.1, 0.1),
            });
        }

        let (nc, na) = (nail_center, nail_axes);
        // zone placement relative to the nail, in nail-axis units
        let layout: [(f64, f64, f64); 8] = [
            (-0.6, 0.0, 0.3),   // fx: distal
            (0.0, -0.65, 0.28), // fy: left
            (0.05, 0.0, 0.4),   // fz: whole nail
            (0.0, 0.65, 0.28),  // tx: right
            (0.6, 0.0, 0.3),    // ty: proximal
            (-0.45, 0.5, 0.25), // tz: distal right
            (1.3, -0.7, 0.3),   // c1: skin, proximal left
            (1.3, 0.7, 0.3),    // c2: skin, proximal right
        ];
        let gains = [2.2, 2.6, 2.4, 2.0, 2.0, 2.0, 1.6, 1.6];
        let mut zones = Vec::new();
        let mut red_ratio = Vec::new();
        for (k, (dy, dx, s)) in layout.iter().enumerate() {
            let sign = if k == 2 || u(0.0, 1.0) < 0.5 { 1.0 } else { -1.0 };
            zones.push(Blob {
                center: (nc.0 + dy * na.0, nc.1 + dx * na.1),
                sigma: s * na.0,
                amplitude: sign * gains[k] * u(0.85, 1.15),
            });
            red_ratio.push(u(0.15, 0.35) * if u(0.0, 1.0) < 0.5 { 1.0 } else { -1.0 });
        }
        Self {
            finger_center,
            finger_axes,
            nail_center,
            nail_axes,
            edge: 0.012,
            background_rgb,
            skin_rgb,
            nail_rgb,
            texture,
            zones,
            red_ratio,
            gain: 1.0,
        }
    }

    /// A later recording session: lighting gain and colour-map drift.
    pub fn perturbed<R: Rng>(&self, rng: &mut R, amount: f64) -> Self {
        let mut s = self.clone();
        let mut u = |a: f64| rng.random_range(-a..=a);
        s.gain *= 1.0 + u(0.08 * amount);
        for z in &mut s.zones {
            z.amplitude *= 1.0 + u(0.15 * amount);
            z.center.0 += u(0.02 * amount);
            z.center.1 += u(0.02 * amount);
        }
        for v in s.skin_rgb.iter_mut().chain(s.nail_rgb.iter_mut()) {
            *v = (*v * (1.0 + u(0.04 * amount))).clamp(0.05, 0.95);
        }
        s
    }
}

/// Template and zone fields evaluated on a pixel grid, possibly through a
/// geometric warp. Rendering a frame from these is a cheap per-pixel blend.
#[derive(Debug, Clone)]
pub struct RenderMaps {
    pub height: usize,
    pub width: usize,
    gain: f64,
    /// Template colour per channel, row-major planes.
    base: [Vec<f64>; 3],
    logit_base: [Vec<f64>; 2],
    /// `phi[k][p]`: green logit shift per unit normalised target `k`.
    phi: Vec<Vec<f64>>,
    red_ratio: Vec<f64>,
    /// Finger indicator > 0.5.
    pub mask: Mask,
}

impl RenderMaps {
    /// Evaluates the style at `p + d(p)` for every pixel `p`.
    pub fn new(style: &NailStyle, height: usize, width: usize, warp: Option<&DisplacementField>) -> Self {
        let (hf, wf) = (height as f64, width as f64);
        let n = height * width;
        let to_px = |c: (f64, f64)| (c.0 * hf, c.1 * wf);
        let fc = to_px(style.finger_center);
        let fa = (style.finger_axes.0 * hf, style.finger_axes.1 * wf);
        let nc = to_px(style.nail_center);
        let na = (style.nail_axes.0 * hf, style.nail_axes.1 * wf);
        let edge = (style.edge * hf).max(0.3);
        let mut base: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(n));
        let mut phi = vec![Vec::with_capacity(n); style.zones.len()];
        let mut mask = Vec::with_capacity(n);
        for r in 0..height {
            for c in 0..width {
                let k = r * width + c;
                let (y, x) = match warp {
                    Some(d) => (r as f64 + d.dy[k], c as f64 + d.dx[k]),
                    None => (r as f64, c as f64),
                };
                let m = ellipse_weight(y, x, fc, fa, edge);
                let nw = ellipse_weight(y, x, nc, na, edge) * m;
                let tex: f64 = style.texture.iter().map(|b| b.at(y, x, hf, wf)).sum::<f64>() * m;
                for ch in 0..3 {
                    let skin = style.skin_rgb[ch] * (1.0 - nw) + style.nail_rgb[ch] * nw;
                    let mut v = style.background_rgb[ch] * (1.0 - m) + skin * m;
                    if ch == BLUE {
                        v += tex;
                    }
                    base[ch].push(v.clamp(0.02, 0.98));
                }
                for (z, zone) in style.zones.iter().enumerate() {
                    phi[z].push(m * zone.at(y, x, hf, wf));
                }
                mask.push(m > 0.5);
            }
        }
        let logit_base = [
            base[RED].iter().map(|&b| logit(b)).collect(),
            base[GREEN].iter().map(|&b| logit(b)).collect(),
        ];
        Self {
            height,
            width,
            gain: style.gain,
            base,
            logit_base,
            phi,
            red_ratio: style.red_ratio.clone(),
            mask: Mask {
                height,
                width,
                data: mask,
            },
        }
    }

    fn shifts(&self, target: &TargetVector) -> Vec<f64> {
        let n = self.height * self.width;
        let mut s = vec![0.0; n];
        for (k, phi) in self.phi.iter().enumerate() {
            let a = target.0[k] / TARGET_SCALE[k];
            if a == 0.0 {
                continue;
            }
            for (sp, p) in s.iter_mut().zip(phi) {
                *sp += a * p;
            }
        }
        s
    }

    fn red_shifts(&self, target: &TargetVector) -> Vec<f64> {
        let n = self.height * self.width;
        let mut s = vec![0.0; n];
        for (k, phi) in self.phi.iter().enumerate() {
            let a = self.red_ratio[k] * target.0[k] / TARGET_SCALE[k];
            if a == 0.0 {
                continue;
            }
            for (sp, p) in s.iter_mut().zip(phi) {
                *sp += a * p;
            }
        }
        s
    }

    /// Noise-free colour planes for a target.
    pub fn planes(&self, target: &TargetVector) -> [Vec<f64>; 3] {
        let sg = self.shifts(target);
        let sr = self.red_shifts(target);
        let blend = |b: &[f64], lb: &[f64], s: &[f64]| -> Vec<f64> {
            b.iter()
                .zip(lb)
                .zip(s)
                .map(|((&b, &l), &s)| {
                    let v = if s == 0.0 { b } else { b + sigmoid(l + s) - sigmoid(l) };
                    v * self.gain
                })
                .collect()
        };
        [
            blend(&self.base[RED], &self.logit_base[0], &sr),
            blend(&self.base[GREEN], &self.logit_base[1], &sg),
            self.base[BLUE].iter().map(|b| b * self.gain).collect(),
        ]
    }

    /// Green plane without noise.
    pub fn green(&self, target: &TargetVector) -> Vec<f64> {
        let sg = self.shifts(target);
        self.base[GREEN]
            .iter()
            .zip(&self.logit_base[1])
            .zip(&sg)
            .map(|((&b, &l), &s)| {
                let v = if s == 0.0 { b } else { b + sigmoid(l + s) - sigmoid(l) };
                v * self.gain
            })
            .collect()
    }

    /// Frame for `target` with additive Gaussian pixel noise, clamped to `[0, 1]`.
    pub fn render<R: Rng>(&self, target: &TargetVector, noise_sigma: f64, rng: &mut R, timestamp: f64) -> ImageFrame {
        let mut planes = self.planes(target);
        add_noise(&mut planes, noise_sigma, rng);
        ImageFrame::from_planes(self.height, self.width, &planes, timestamp).expect("planes match canvas")
    }

    /// Maximum-likelihood inverse of the green colour map under Gaussian
    /// pixel noise: Levenberg–Marquardt from the zero target.
    pub fn invert_green(&self, green: &[f64]) -> TargetVector {
        let n = self.height * self.width;
        let k = self.phi.len();
        let mut a = vec![0.0; k];
        let mut lambda = 1e-3;
        let residual = |a: &[f64]| -> (Vec<f64>, Vec<f64>, f64) {
            let mut s = vec![0.0; n];
            for (j, phi) in self.phi.iter().enumerate() {
                for (sp, p) in s.iter_mut().zip(phi) {
                    *sp += a[j] * p;
                }
            }
            let mut res = Vec::with_capacity(n);
            let mut slope = Vec::with_capacity(n);
            let mut cost = 0.0;
            for p in 0..n {
                let l = self.logit_base[1][p];
                let sig = sigmoid(l + s[p]);
                let pred = (self.base[GREEN][p] + sig - sigmoid(l)) * self.gain;
                let r = green[p] - pred;
                cost += r * r;
                res.push(r);
                slope.push(sig * (1.0 - sig) * self.gain);
            }
            (res, slope, cost)
        };
        let (mut res, mut slope, mut cost) = residual(&a);
        for _ in 0..50 {
            let mut jtj = nalgebra::DMatrix::<f64>::zeros(k, k);
            let mut jtr = nalgebra::DVector::<f64>::zeros(k);
            for p in 0..n {
                if slope[p] == 0.0 {
                    continue;
                }
                let row: Vec<f64> = self.phi.iter().map(|phi| phi[p] * slope[p]).collect();
                for i in 0..k {
                    jtr[i] += row[i] * res[p];
                    for j in 0..=i {
                        jtj[(i, j)] += row[i] * row[j];
                    }
                }
            }
            for i in 0..k {
                for j in 0..i {
                    jtj[(j, i)] = jtj[(i, j)];
                }
            }
            let mut improved = false;
            for _ in 0..20 {
                let mut m = jtj.clone();
                for i in 0..k {
                    m[(i, i)] *= 1.0 + lambda;
                    m[(i, i)] += 1e-12;
                }
                let Some(step) = m.cholesky().map(|c| c.solve(&jtr)) else {
                    lambda *= 10.0;
                    continue;
                };
                let cand: Vec<f64> = a.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
                let (r2, s2, c2) = residual(&cand);
                if c2 < cost {
                    let rel = (cost - c2) / cost.max(f64::MIN_POSITIVE);
                    a = cand;
                    res = r2;
                    slope = s2;
                    cost = c2;
                    lambda = (lambda * 0.3).max(1e-9);
                    improved = rel > 1e-12;
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        let mut t = TargetVector::default();
        for j in 0..k {
            t.0[j] = a[j] * TARGET_SCALE[j];
        }
        t
    }
}

pub(crate) fn add_noise<R: Rng>(planes: &mut [Vec<f64>], sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for p in planes.iter_mut() {
        for v in p.iter_mut() {
            *v += normal.sample(rng);
        }
    }
}

/// Bilinear translation `out(p) = in(p − shift)` with edge replication.
pub(crate) fn translate_plane(plane: &[f64], h: usize, w: usize, shift: (f64, f64)) -> Vec<f64> {
    if shift == (0.0, 0.0) {
        return plane.to_vec();
    }
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let y = (r as f64 - shift.0).clamp(0.0, (h - 1) as f64);
            let x = (c as f64 - shift.1).clamp(0.0, (w - 1) as f64);
            let (r0, c0) = (y.floor() as usize, x.floor() as usize);
            let (r1, c1) = ((r0 + 1).min(h - 1), (c0 + 1).min(w - 1));
            let (fy, fx) = (y - r0 as f64, x - c0 as f64);
            let top = plane[r0 * w + c0] * (1.0 - fx) + plane[r0 * w + c1] * fx;
            let bot = plane[r1 * w + c0] * (1.0 - fx) + plane[r1 * w + c1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}
