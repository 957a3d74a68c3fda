//! Convolutional network: convolution, tanh and max-pooling stages followed
//! by a fully connected tanh layer and a linear output layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fd::Activation;
use super::train::Trainable;
use super::{glorot, Example};
use crate::error::{Error, Result};

/// Single-channel 2-D map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidInput(format!("{} values for a {height}x{width} map", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }
}

/// Valid cross-correlation of a multi-channel input `(c, h, w)` with `k`
/// kernels of shape `(c, s, s)`; `out` is `(k, h−s+1, w−s+1)` and is
/// overwritten. Each output value is summed over channel, kernel row and
/// kernel column in that order, then the bias is added.
fn conv_forward(input: &[f64], c: usize, h: usize, w: usize, kernels: &[f64], bias: &[f64], s: usize, out: &mut [f64]) {
    let (ho, wo) = (h - s + 1, w - s + 1);
    out.iter_mut().for_each(|v| *v = 0.0);
    for (k, &b) in bias.iter().enumerate() {
        let o = &mut out[k * ho * wo..(k + 1) * ho * wo];
        for ch in 0..c {
            let plane = &input[ch * h * w..(ch + 1) * h * w];
            for u in 0..s {
                for v in 0..s {
                    let wt = kernels[((k * c + ch) * s + u) * s + v];
                    for m in 0..ho {
                        let src = &plane[(m + u) * w + v..(m + u) * w + v + wo];
                        let dst = &mut o[m * wo..(m + 1) * wo];
                        for (d, x) in dst.iter_mut().zip(src) {
                            *d += wt * x;
                        }
                    }
                }
            }
        }
        o.iter_mut().for_each(|v| *v += b);
    }
}

/// Gradients of `conv_forward` given `g_out`; `g_input` may be skipped.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kernels: &[f64],
    s: usize,
    g_out: &[f64],
    g_kernels: &mut [f64],
    g_bias: &mut [f64],
    mut g_input: Option<&mut [f64]>,
) {
    let (ho, wo) = (h - s + 1, w - s + 1);
    for (k, gb) in g_bias.iter_mut().enumerate() {
        let go = &g_out[k * ho * wo..(k + 1) * ho * wo];
        *gb += go.iter().sum::<f64>();
        for ch in 0..c {
            let plane = &input[ch * h * w..(ch + 1) * h * w];
            for u in 0..s {
                for v in 0..s {
                    let idx = ((k * c + ch) * s + u) * s + v;
                    let mut acc = 0.0;
                    for m in 0..ho {
                        let src = &plane[(m + u) * w + v..(m + u) * w + v + wo];
                        acc += go[m * wo..(m + 1) * wo].iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                    g_kernels[idx] += acc;
                    if let Some(gi) = g_input.as_deref_mut() {
                        let wt = kernels[idx];
                        let gplane = &mut gi[ch * h * w..(ch + 1) * h * w];
                        for m in 0..ho {
                            let dst = &mut gplane[(m + u) * w + v..(m + u) * w + v + wo];
                            for (d, g) in dst.iter_mut().zip(&go[m * wo..(m + 1) * wo]) {
                                *d += wt * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Max-pooling over `r1 × r2` blocks of each channel. Blocks overhanging the
/// edge are padded with −∞. Returns the pooled values and, for each, the flat
/// index of the first maximal input.
fn pool_forward(input: &[f64], c: usize, h: usize, w: usize, r1: usize, r2: usize) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h.div_ceil(r1), w.div_ceil(r2));
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut at = usize::MAX;
                for a in i * r1..((i + 1) * r1).min(h) {
                    for b in j * r2..((j + 1) * r2).min(w) {
                        let idx = (ch * h + a) * w + b;
                        if at == usize::MAX || input[idx] > best {
                            best = input[idx];
                            at = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(at);
            }
        }
    }
    (out, arg)
}

/// `h ⊛ w + b` for single-channel maps (valid region only).
pub fn conv2d(input: &Map, kernel: &Map, bias: f64) -> Result<Map> {
    if kernel.height != kernel.width {
        return Err(Error::InvalidInput("kernel must be square".into()));
    }
    let s = kernel.height;
    if s == 0 || s > input.height || s > input.width {
        return Err(Error::InvalidInput(format!(
            "{s}x{s} kernel does not fit a {}x{} input",
            input.height, input.width
        )));
    }
    let mut out = Map::zeros(input.height - s + 1, input.width - s + 1);
    conv_forward(&input.data, 1, input.height, input.width, &kernel.data, &[bias], s, &mut out.data);
    Ok(out)
}

/// Block max over `r1 × r2` blocks with −∞ padding at the far edges.
pub fn maxpool(input: &Map, r1: usize, r2: usize) -> Result<Map> {
    if r1 == 0 || r2 == 0 {
        return Err(Error::InvalidInput("pooling block must be non-empty".into()));
    }
    let (data, _) = pool_forward(&input.data, 1, input.height, input.width, r1, r2);
    Map::new(input.height.div_ceil(r1), input.width.div_ceil(r2), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernels: usize,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    /// Euclidean norm of the residual.
    #[default]
    Norm,
    /// Squared Euclidean norm.
    Squared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnSpec {
    pub conv: Vec<ConvLayerSpec>,
    pub pool: [usize; 2],
    pub conv_activation: Activation,
    pub hidden: usize,
    pub loss: LossNorm,
}

impl Default for CnnSpec {
    fn default() -> Self {
        Self {
            conv: vec![ConvLayerSpec { kernels: 8, size: 5 }, ConvLayerSpec { kernels: 25, size: 5 }],
            pool: [2, 2],
            conv_activation: Activation::Tanh,
            hidden: 100,
            loss: LossNorm::Norm,
        }
    }
}

/// Shape `(channels, height, width)`.
pub type Shape = (usize, usize, usize);

impl CnnSpec {
    /// Shapes after each convolution and each pooling stage, in order,
    /// starting from `input`.
    pub fn shapes(&self, input: Shape) -> Result<Vec<Shape>> {
        let [r1, r2] = self.pool;
        if r1 == 0 || r2 == 0 || self.hidden == 0 || self.conv.is_empty() {
            return Err(Error::InvalidInput(format!("invalid network specification {self:?}")));
        }
        let mut shapes = vec![input];
        let (_, mut h, mut w) = input;
        for l in &self.conv {
            if l.kernels == 0 || l.size == 0 || l.size > h || l.size > w {
                return Err(Error::InvalidInput(format!("{}x{} kernel does not fit a {h}x{w} map", l.size, l.size)));
            }
            h = h - l.size + 1;
            w = w - l.size + 1;
            shapes.push((l.kernels, h, w));
            h = h.div_ceil(r1);
            w = w.div_ceil(r2);
            shapes.push((l.kernels, h, w));
        }
        Ok(shapes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct ConvOffsets {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cnn {
    spec: CnnSpec,
    shapes: Vec<Shape>,
    n_out: usize,
    conv_off: Vec<ConvOffsets>,
    fc: [usize; 4],
    #[serde(with = "crate::blob")]
    params: Vec<f64>,
}

struct Trace {
    /// Input of each convolution stage (the network input, then each pooled map).
    inputs: Vec<Vec<f64>>,
    /// Activated convolution outputs.
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

impl Cnn {
    pub fn new(spec: CnnSpec, input: Shape, n_out: usize, rng: &mut impl Rng) -> Result<Self> {
        if n_out == 0 || input.0 == 0 {
            return Err(Error::InvalidInput("network needs inputs and outputs".into()));
        }
        let shapes = spec.shapes(input)?;
        let mut params = Vec::new();
        let mut conv_off = Vec::new();
        let mut c_in = input.0;
        for l in &spec.conv {
            let fan_in = c_in * l.size * l.size;
            let fan_out = l.kernels * l.size * l.size;
            let w = params.len();
            params.extend(glorot(rng, fan_in, fan_out, l.kernels * fan_in));
            let b = params.len();
            params.extend(std::iter::repeat_n(0.0, l.kernels));
            conv_off.push(ConvOffsets { w, b });
            c_in = l.kernels;
        }
        let (c, h, w) = *shapes.last().expect("at least one stage");
        let flat = c * h * w;
        let w1 = params.len();
        params.extend(glorot(rng, flat, spec.hidden, flat * spec.hidden));
        let b1 = params.len();
        params.extend(std::iter::repeat_n(0.0, spec.hidden));
        let w2 = params.len();
        params.extend(glorot(rng, spec.hidden, n_out, spec.hidden * n_out));
        let b2 = params.len();
        params.extend(std::iter::repeat_n(0.0, n_out));
        Ok(Self {
            spec,
            shapes,
            n_out,
            conv_off,
            fc: [w1, b1, w2, b2],
            params,
        })
    }

    pub fn spec(&self) -> &CnnSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> Shape {
        self.shapes[0]
    }

    /// Shapes after each convolution and pooling stage.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes[1..]
    }

    pub fn n_outputs(&self) -> usize {
        self.n_out
    }

    fn flat_len(&self) -> usize {
        let (c, h, w) = *self.shapes.last().expect("at least one stage");
        c * h * w
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let [r1, r2] = self.spec.pool;
        let mut inputs = vec![x.to_vec()];
        let mut acts = Vec::new();
        let mut argmax = Vec::new();
        for (i, l) in self.spec.conv.iter().enumerate() {
            let (c, h, w) = self.shapes[2 * i];
            let (k, ho, wo) = self.shapes[2 * i + 1];
            let o = self.conv_off[i];
            let mut z = vec![0.0; k * ho * wo];
            conv_forward(&inputs[i], c, h, w, &self.params[o.w..o.b], &self.params[o.b..o.b + k], l.size, &mut z);
            z.iter_mut().for_each(|v| *v = self.spec.conv_activation.apply(*v));
            let (p, a) = pool_forward(&z, k, ho, wo, r1, r2);
            acts.push(z);
            argmax.push(a);
            inputs.push(p);
        }
        let flat = inputs.last().expect("pooled map");
        let [w1, b1, w2, b2] = self.fc;
        let n = flat.len();
        let hidden: Vec<f64> = (0..self.spec.hidden)
            .map(|j| {
                let row = &self.params[w1 + j * n..w1 + (j + 1) * n];
                (self.params[b1 + j] + row.iter().zip(flat).map(|(a, b)| a * b).sum::<f64>()).tanh()
            })
            .collect();
        let nh = hidden.len();
        let out = (0..self.n_out)
            .map(|j| {
                let row = &self.params[w2 + j * nh..w2 + (j + 1) * nh];
                self.params[b2 + j] + row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        Trace {
            inputs,
            acts,
            argmax,
            hidden,
            out,
        }
    }

    /// Network output for one input laid out as `(channel, row, column)`.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (c, h, w) = self.shapes[0];
        if x.len() != c * h * w {
            return Err(Error::InvalidInput(format!("input of length {} for a {c}x{h}x{w} network", x.len())));
        }
        Ok(self.trace(x).out)
    }

    fn loss_and_residual_grad(&self, out: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
        let r: Vec<f64> = out.iter().zip(y).map(|(a, b)| a - b).collect();
        let sq: f64 = r.iter().map(|v| v * v).sum();
        match self.spec.loss {
            LossNorm::Squared => (sq, r.iter().map(|v| 2.0 * v).collect()),
            LossNorm::Norm => {
                let n = sq.sqrt();
                let g = if n > 0.0 { r.iter().map(|v| v / n).collect() } else { vec![0.0; r.len()] };
                (n, g)
            }
        }
    }
}

impl Trainable for Cnn {
    type Sample = Example;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn sample_loss_grad(&self, s: &Example, grad: &mut [f64]) -> f64 {
        let t = self.trace(&s.x);
        let (loss, g_out) = self.loss_and_residual_grad(&t.out, &s.y);
        let [w1, b1, w2, b2] = self.fc;
        let nh = t.hidden.len();
        let flat = t.inputs.last().expect("pooled map");
        let n = flat.len();
        let mut g_hidden = vec![0.0; nh];
        for (j, &g) in g_out.iter().enumerate() {
            grad[b2 + j] += g;
            for (i, &hv) in t.hidden.iter().enumerate() {
                grad[w2 + j * nh + i] += g * hv;
                g_hidden[i] += g * self.params[w2 + j * nh + i];
            }
        }
        let mut g_flat = vec![0.0; n];
        for (j, &hv) in t.hidden.iter().enumerate() {
            let gz = g_hidden[j] * (1.0 - hv * hv);
            if gz == 0.0 {
                continue;
            }
            grad[b1 + j] += gz;
            let row = &self.params[w1 + j * n..w1 + (j + 1) * n];
            let grow = &mut grad[w1 + j * n..w1 + (j + 1) * n];
            for i in 0..n {
                grow[i] += gz * flat[i];
                g_flat[i] += gz * row[i];
            }
        }
        let mut g_pooled = g_flat;
        for i in (0..self.spec.conv.len()).rev() {
            let l = self.spec.conv[i];
            let (c, h, w) = self.shapes[2 * i];
            let (k, ho, wo) = self.shapes[2 * i + 1];
            let mut g_z = vec![0.0; k * ho * wo];
            for (&g, &at) in g_pooled.iter().zip(&t.argmax[i]) {
                g_z[at] += g;
            }
            for (g, &a) in g_z.iter_mut().zip(&t.acts[i]) {
                *g *= self.spec.conv_activation.derivative_from_output(a);
            }
            let o = self.conv_off[i];
            let mut g_in = if i > 0 { Some(vec![0.0; c * h * w]) } else { None };
            let (gk, gb) = grad[o.w..o.b + k].split_at_mut(o.b - o.w);
            conv_backward(&t.inputs[i], c, h, w, &self.params[o.w..o.b], l.size, &g_z, gk, gb, g_in.as_deref_mut());
            if let Some(g) = g_in {
                g_pooled = g;
            }
        }
        debug_assert_eq!(self.flat_len(), n);
        loss
    }

    fn sample_loss(&self, s: &Example) -> f64 {
        let t = self.trace(&s.x);
        self.loss_and_residual_grad(&t.out, &s.y).0
    }
}
