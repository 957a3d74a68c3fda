//! Feedforward network trained with fast dropout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fd::{accumulate_moments, accumulate_moments_backward, unit_moments, Activation, UnitMoments};
use super::train::Trainable;
use super::{glorot, Example};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdNetSpec {
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// Drop probability on the network inputs.
    pub drop_input: f64,
    /// Drop probability on hidden-unit outputs.
    pub drop_hidden: f64,
}

impl Default for FdNetSpec {
    fn default() -> Self {
        Self {
            hidden: vec![170, 120, 35],
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
            drop_input: 0.3,
            drop_hidden: 0.3,
        }
    }
}

impl FdNetSpec {
    pub fn validate(&self) -> Result<()> {
        for p in [self.drop_input, self.drop_hidden] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("drop probability {p} outside [0, 1)")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidInput("hidden layer of width zero".into()));
        }
        Ok(())
    }

    fn keep(&self, layer: usize) -> f64 {
        1.0 - if layer == 0 { self.drop_input } else { self.drop_hidden }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Layer {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdNet {
    spec: FdNetSpec,
    n_in: usize,
    n_out: usize,
    layers: Vec<Layer>,
    #[serde(with = "crate::blob")]
    params: Vec<f64>,
}

/// Per-layer values kept from the forward pass for backpropagation.
struct Trace {
    /// Input mean and variance of each layer.
    e: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    units: Vec<Vec<UnitMoments>>,
}

impl FdNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new(spec: FdNetSpec, n_in: usize, n_out: usize, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        if n_in == 0 || n_out == 0 {
            return Err(Error::InvalidInput("network needs inputs and outputs".into()));
        }
        let mut widths = vec![n_in];
        widths.extend(&spec.hidden);
        widths.push(n_out);
        let mut layers = Vec::new();
        let mut params = Vec::new();
        for pair in widths.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let w = params.len();
            params.extend(glorot(rng, a, b, a * b));
            let bo = params.len();
            params.extend(std::iter::repeat_n(0.0, b));
            layers.push(Layer {
                n_in: a,
                n_out: b,
                w,
                b: bo,
            });
        }
        Ok(Self {
            spec,
            n_in,
            n_out,
            layers,
            params,
        })
    }

    pub fn spec(&self) -> &FdNetSpec {
        &self.spec
    }

    pub fn n_inputs(&self) -> usize {
        self.n_in
    }

    pub fn n_outputs(&self) -> usize {
        self.n_out
    }

    /// Weights (row-major, one row per output unit) and biases of layer `i`.
    pub fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let l = &self.layers[i];
        (&self.params[l.w..l.w + l.n_in * l.n_out], &self.params[l.b..l.b + l.n_out])
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.spec.output_activation
        } else {
            self.spec.hidden_activation
        }
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut e = vec![x.to_vec()];
        let mut v = vec![vec![0.0; x.len()]];
        let mut units = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let (w, b) = (&self.params[l.w..l.b], &self.params[l.b..l.b + l.n_out]);
            let mut mean = b.to_vec();
            let mut var = vec![0.0; l.n_out];
            accumulate_moments(w, &e[i], &v[i], self.spec.keep(i), &mut mean, &mut var);
            let act = self.activation(i);
            let u: Vec<UnitMoments> = mean.iter().zip(&var).map(|(&m, &s)| unit_moments(m, s, act)).collect();
            e.push(u.iter().map(|m| m.nu).collect());
            v.push(u.iter().map(|m| m.tau2).collect());
            units.push(u);
        }
        Trace { e, v, units }
    }

    /// Output mean and variance under the moment approximation; the mean is
    /// the deterministic prediction.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.n_in {
            return Err(Error::InvalidInput(format!("input of length {} for a {}-input network", x.len(), self.n_in)));
        }
        let mut t = self.trace(x);
        Ok((t.e.pop().expect("output layer"), t.v.pop().expect("output layer")))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// Backpropagates output gradients `(∂L/∂ν, ∂L/∂τ²)` through a trace.
    fn backward(&self, t: &Trace, mut g_e: Vec<f64>, mut g_v: Vec<f64>, grad: &mut [f64]) {
        for i in (0..self.layers.len()).rev() {
            let l = self.layers[i];
            let mut g_mu = Vec::with_capacity(l.n_out);
            let mut g_s2 = Vec::with_capacity(l.n_out);
            for (k, u) in t.units[i].iter().enumerate() {
                g_mu.push(g_e[k] * u.dnu_dmu + g_v[k] * u.dtau2_dmu);
                g_s2.push(g_e[k] * u.dnu_ds2 + g_v[k] * u.dtau2_ds2);
            }
            let (gw, gb) = grad[l.w..l.b + l.n_out].split_at_mut(l.b - l.w);
            for (a, b) in gb.iter_mut().zip(&g_mu) {
                *a += b;
            }
            let mut ge = vec![0.0; l.n_in];
            let mut gv = vec![0.0; l.n_in];
            accumulate_moments_backward(
                &self.params[l.w..l.b],
                &t.e[i],
                &t.v[i],
                self.spec.keep(i),
                &g_mu,
                &g_s2,
                gw,
                &mut ge,
                &mut gv,
            );
            g_e = ge;
            g_v = gv;
        }
    }
}

impl Trainable for FdNet {
    type Sample = Example;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Expected squared error `Σₖ (νₖ − yₖ)² + τₖ²` under the output moments.
    fn sample_loss_grad(&self, s: &Example, grad: &mut [f64]) -> f64 {
        let t = self.trace(&s.x);
        let (mean, var) = (&t.e[t.e.len() - 1], &t.v[t.v.len() - 1]);
        let mut loss = 0.0;
        let mut g_e = Vec::with_capacity(self.n_out);
        for k in 0..self.n_out {
            let r = mean[k] - s.y[k];
            loss += r * r + var[k];
            g_e.push(2.0 * r);
        }
        self.backward(&t, g_e, vec![1.0; self.n_out], grad);
        loss
    }

    fn sample_loss(&self, s: &Example) -> f64 {
        let t = self.trace(&s.x);
        let (mean, var) = (&t.e[t.e.len() - 1], &t.v[t.v.len() - 1]);
        (0..self.n_out).map(|k| (mean[k] - s.y[k]).powi(2) + var[k]).sum()
    }
}
