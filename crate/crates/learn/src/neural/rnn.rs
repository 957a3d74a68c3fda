//! Elman recurrent network trained with fast dropout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fd::{accumulate_moments, accumulate_moments_backward, unit_moments, Activation, UnitMoments};
use super::glorot;
use super::train::Trainable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnSpec {
    pub hidden: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub drop_input: f64,
    pub drop_hidden: f64,
    /// Training windows are cut into sequences of this many frames.
    pub window: usize,
}

impl Default for RnnSpec {
    fn default() -> Self {
        Self {
            hidden: 100,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
            drop_input: 0.5,
            drop_hidden: 0.5,
            window: 32,
        }
    }
}

impl RnnSpec {
    pub fn validate(&self) -> Result<()> {
        for p in [self.drop_input, self.drop_hidden] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("drop probability {p} outside [0, 1)")));
            }
        }
        if self.hidden == 0 || self.window == 0 {
            return Err(Error::InvalidInput("hidden width and window must be positive".into()));
        }
        Ok(())
    }
}

/// Input and target sequences of equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Offsets {
    w_in: usize,
    w_rec: usize,
    b_h: usize,
    w_out: usize,
    b_y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdRnn {
    spec: RnnSpec,
    n_in: usize,
    n_out: usize,
    off: Offsets,
    #[serde(with = "crate::blob")]
    params: Vec<f64>,
}

struct Step {
    /// Hidden state moments entering the step.
    e_prev: Vec<f64>,
    v_prev: Vec<f64>,
    hidden: Vec<UnitMoments>,
    e: Vec<f64>,
    v: Vec<f64>,
    out: Vec<UnitMoments>,
}

impl FdRnn {
    pub fn new(spec: RnnSpec, n_in: usize, n_out: usize, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        if n_in == 0 || n_out == 0 {
            return Err(Error::InvalidInput("network needs inputs and outputs".into()));
        }
        let h = spec.hidden;
        let mut params = Vec::new();
        let w_in = params.len();
        params.extend(glorot(rng, n_in, h, n_in * h));
        let w_rec = params.len();
        params.extend(glorot(rng, h, h, h * h));
        let b_h = params.len();
        params.extend(std::iter::repeat_n(0.0, h));
        let w_out = params.len();
        params.extend(glorot(rng, h, n_out, h * n_out));
        let b_y = params.len();
        params.extend(std::iter::repeat_n(0.0, n_out));
        Ok(Self {
            spec,
            n_in,
            n_out,
            off: Offsets {
                w_in,
                w_rec,
                b_h,
                w_out,
                b_y,
            },
            params,
        })
    }

    pub fn spec(&self) -> &RnnSpec {
        &self.spec
    }

    pub fn n_inputs(&self) -> usize {
        self.n_in
    }

    pub fn n_outputs(&self) -> usize {
        self.n_out
    }

    pub fn input_weights(&self) -> &[f64] {
        &self.params[self.off.w_in..self.off.w_rec]
    }

    pub fn recurrent_weights(&self) -> &[f64] {
        &self.params[self.off.w_rec..self.off.b_h]
    }

    pub fn input_weights_mut(&mut self) -> &mut [f64] {
        &mut self.params[self.off.w_in..self.off.w_rec]
    }

    pub fn recurrent_weights_mut(&mut self) -> &mut [f64] {
        &mut self.params[self.off.w_rec..self.off.b_h]
    }

    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        &mut self.params[self.off.b_y..]
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.params[self.off.b_h..self.off.w_out]
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.params[self.off.w_out..self.off.b_y]
    }

    pub fn output_bias(&self) -> &[f64] {
        &self.params[self.off.b_y..]
    }

    fn run(&self, xs: &[Vec<f64>]) -> Vec<Step> {
        let h = self.spec.hidden;
        let (p_in, p_h) = (1.0 - self.spec.drop_input, 1.0 - self.spec.drop_hidden);
        let mut e = vec![0.0; h];
        let mut v = vec![0.0; h];
        let zeros = vec![0.0; self.n_in];
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let mut mean = self.hidden_bias().to_vec();
            let mut var = vec![0.0; h];
            accumulate_moments(self.input_weights(), x, &zeros, p_in, &mut mean, &mut var);
            accumulate_moments(self.recurrent_weights(), &e, &v, p_h, &mut mean, &mut var);
            let hidden: Vec<UnitMoments> =
                mean.iter().zip(&var).map(|(&m, &s)| unit_moments(m, s, self.spec.hidden_activation)).collect();
            let ne: Vec<f64> = hidden.iter().map(|u| u.nu).collect();
            let nv: Vec<f64> = hidden.iter().map(|u| u.tau2).collect();
            let mut om = self.output_bias().to_vec();
            let mut ov = vec![0.0; self.n_out];
            accumulate_moments(self.output_weights(), &ne, &nv, p_h, &mut om, &mut ov);
            let out = om.iter().zip(&ov).map(|(&m, &s)| unit_moments(m, s, self.spec.output_activation)).collect();
            steps.push(Step {
                e_prev: std::mem::replace(&mut e, ne.clone()),
                v_prev: std::mem::replace(&mut v, nv.clone()),
                hidden,
                e: ne,
                v: nv,
                out,
            });
        }
        steps
    }

    fn check(&self, xs: &[Vec<f64>]) -> Result<()> {
        if xs.is_empty() {
            return Err(Error::InvalidInput("empty sequence".into()));
        }
        if let Some(x) = xs.iter().find(|x| x.len() != self.n_in) {
            return Err(Error::InvalidInput(format!("input of length {} for a {}-input network", x.len(), self.n_in)));
        }
        Ok(())
    }

    /// Output means and variances for each step, starting from a zero state.
    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        self.check(xs)?;
        Ok(self
            .run(xs)
            .into_iter()
            .map(|s| (s.out.iter().map(|u| u.nu).collect(), s.out.iter().map(|u| u.tau2).collect()))
            .collect())
    }

    /// Output means for each step.
    pub fn predict_sequence(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward(xs)?.into_iter().map(|(m, _)| m).collect())
    }
}

fn residual_norm(out: &[UnitMoments], y: &[f64]) -> (f64, Vec<f64>) {
    let r: Vec<f64> = out.iter().zip(y).map(|(u, t)| u.nu - t).collect();
    let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    (n, r)
}

impl Trainable for FdRnn {
    type Sample = Sequence;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Sum over steps of the Euclidean norm of the output-mean residual.
    fn sample_loss_grad(&self, s: &Sequence, grad: &mut [f64]) -> f64 {
        let steps = self.run(&s.xs);
        let h = self.spec.hidden;
        let (p_in, p_h) = (1.0 - self.spec.drop_input, 1.0 - self.spec.drop_hidden);
        let o = self.off;
        let zeros = vec![0.0; self.n_in];
        let mut sink_e = vec![0.0; self.n_in];
        let mut sink_v = vec![0.0; self.n_in];
        let mut loss = 0.0;
        // Gradient w.r.t. the hidden state moments flowing back from later steps.
        let mut g_e = vec![0.0; h];
        let mut g_v = vec![0.0; h];
        for t in (0..steps.len()).rev() {
            let step = &steps[t];
            let (norm, r) = residual_norm(&step.out, &s.ys[t]);
            loss += norm;
            if norm > 0.0 {
                let g_mu: Vec<f64> = r.iter().zip(&step.out).map(|(v, u)| v / norm * u.dnu_dmu).collect();
                let g_s2: Vec<f64> = r.iter().zip(&step.out).map(|(v, u)| v / norm * u.dnu_ds2).collect();
                let (head, gb_y) = grad.split_at_mut(o.b_y);
                for (a, b) in gb_y.iter_mut().zip(&g_mu) {
                    *a += b;
                }
                accumulate_moments_backward(
                    self.output_weights(),
                    &step.e,
                    &step.v,
                    p_h,
                    &g_mu,
                    &g_s2,
                    &mut head[o.w_out..],
                    &mut g_e,
                    &mut g_v,
                );
            }
            let mut g_mu = Vec::with_capacity(h);
            let mut g_s2 = Vec::with_capacity(h);
            for (k, u) in step.hidden.iter().enumerate() {
                g_mu.push(g_e[k] * u.dnu_dmu + g_v[k] * u.dtau2_dmu);
                g_s2.push(g_e[k] * u.dnu_ds2 + g_v[k] * u.dtau2_ds2);
            }
            let (g_in, rest) = grad[o.w_in..o.w_out].split_at_mut(o.w_rec - o.w_in);
            let (g_rec, g_bh) = rest.split_at_mut(o.b_h - o.w_rec);
            for (a, b) in g_bh.iter_mut().zip(&g_mu) {
                *a += b;
            }
            accumulate_moments_backward(
                self.input_weights(),
                &s.xs[t],
                &zeros,
                p_in,
                &g_mu,
                &g_s2,
                g_in,
                &mut sink_e,
                &mut sink_v,
            );
            g_e.iter_mut().for_each(|v| *v = 0.0);
            g_v.iter_mut().for_each(|v| *v = 0.0);
            accumulate_moments_backward(
                self.recurrent_weights(),
                &step.e_prev,
                &step.v_prev,
                p_h,
                &g_mu,
                &g_s2,
                g_rec,
                &mut g_e,
                &mut g_v,
            );
        }
        loss
    }

    fn sample_loss(&self, s: &Sequence) -> f64 {
        self.run(&s.xs).iter().zip(&s.ys).map(|(st, y)| residual_norm(&st.out, y).0).sum()
    }
}
