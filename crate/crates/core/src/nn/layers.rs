use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gaussian::{clamp_log_var, sigmoid, GaussianParams, LOG_VAR_MAX, LOG_VAR_MIN};
use super::graph::{Activation, Graph, Var};
use super::mat::{dot, Mat};
use super::param::{ParamId, ParamSet, ParamTensor};
use crate::error::{shape_err, Result};

/// `activation(W x + b)` for a single input vector.
pub fn dense_forward(weight: &ParamTensor, bias: &ParamTensor, input: &[f64], activation: Activation) -> Result<Vec<f64>> {
    let (out, inp) = match weight.shape.as_slice() {
        [o, i] => (*o, *i),
        s => return Err(shape_err("dense_forward", "2-D weight", format!("{s:?}"))),
    };
    if input.len() != inp {
        return Err(shape_err("dense_forward", inp, input.len()));
    }
    if bias.len() != out {
        return Err(shape_err("dense_forward bias", out, bias.len()));
    }
    Ok((0..out)
        .map(|o| activation.apply(bias.values[o] + dot(&weight.values[o * inp..(o + 1) * inp], input)))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new<R: Rng>(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let weight = params.add_glorot(&format!("{name}.weight"), out_dim, in_dim, rng);
        let bias = params.add_zeros(&format!("{name}.bias"), vec![out_dim]);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &[f64]) -> Result<Vec<f64>> {
        dense_forward(params.get(self.weight), params.get(self.bias), x, self.activation)
    }

    pub fn forward_graph(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.linear(x, w, Some(b))?;
        Ok(match self.activation {
            Activation::Identity => y,
            act => g.act(y, act),
        })
    }
}

/// Stack of dense layers; hidden layers share one activation, the output
/// layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Dense::new(params, &format!("{name}.{i}"), prev, h, activation, rng));
            prev = h;
        }
        layers.push(Dense::new(params, &format!("{name}.out"), prev, out_dim, Activation::Identity, rng));
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, params: &ParamSet, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.forward(params, &h)?;
        }
        Ok(h)
    }

    pub fn forward_graph(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for l in &self.layers {
            h = l.forward_graph(g, h)?;
        }
        Ok(h)
    }
}

/// MLP whose output is split into a mean and a clamped log-variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    pub mlp: Mlp,
    pub dim: usize,
}

impl GaussianHead {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: &[usize],
        dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            mlp: Mlp::new(params, name, in_dim, hidden, 2 * dim, activation, rng),
            dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn forward(&self, params: &ParamSet, x: &[f64]) -> Result<GaussianParams> {
        let out = self.mlp.forward(params, x)?;
        let (m, lv) = out.split_at(self.dim);
        Ok(GaussianParams {
            mean: m.to_vec(),
            log_var: lv.iter().map(|v| clamp_log_var(*v)).collect(),
        })
    }

    /// Returns `(mean, log_var)` nodes for a batch.
    pub fn forward_graph(&self, g: &mut Graph<'_>, x: Var) -> Result<(Var, Var)> {
        let out = self.mlp.forward_graph(g, x)?;
        let m = g.slice(out, 0, self.dim)?;
        let lv = g.slice(out, self.dim, self.dim)?;
        let lv = g.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX);
        Ok((m, lv))
    }
}

/// Gated recurrent unit with stacked reset/update/candidate gates.
///
/// `r = σ(W_r x + b_r + U_r h + c_r)`, `u = σ(W_u x + b_u + U_u h + c_u)`,
/// `n = tanh(W_n x + b_n + r ⊙ (U_n h + c_n))`, `h' = (1 - u) ⊙ n + u ⊙ h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input_dim: usize,
    pub state_dim: usize,
}

impl GruCell {
    pub fn new<R: Rng>(params: &mut ParamSet, name: &str, input_dim: usize, state_dim: usize, rng: &mut R) -> Self {
        let w_ih = params.add_glorot(&format!("{name}.w_ih"), 3 * state_dim, input_dim, rng);
        let w_hh = params.add_glorot(&format!("{name}.w_hh"), 3 * state_dim, state_dim, rng);
        let b_ih = params.add_zeros(&format!("{name}.b_ih"), vec![3 * state_dim]);
        let b_hh = params.add_zeros(&format!("{name}.b_hh"), vec![3 * state_dim]);
        Self {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            input_dim,
            state_dim,
        }
    }

    pub fn forward_graph(&self, g: &mut Graph<'_>, h: Var, x: Var) -> Result<Var> {
        let hd = self.state_dim;
        let (w_ih, w_hh, b_ih, b_hh) = (g.param(self.w_ih), g.param(self.w_hh), g.param(self.b_ih), g.param(self.b_hh));
        let gi = g.linear(x, w_ih, Some(b_ih))?;
        let gh = g.linear(h, w_hh, Some(b_hh))?;
        let (gi_r, gh_r) = (g.slice(gi, 0, hd)?, g.slice(gh, 0, hd)?);
        let (gi_u, gh_u) = (g.slice(gi, hd, hd)?, g.slice(gh, hd, hd)?);
        let (gi_n, gh_n) = (g.slice(gi, 2 * hd, hd)?, g.slice(gh, 2 * hd, hd)?);
        let r = g.add(gi_r, gh_r)?;
        let r = g.act(r, Activation::Sigmoid);
        let u = g.add(gi_u, gh_u)?;
        let u = g.act(u, Activation::Sigmoid);
        let rn = g.mul(r, gh_n)?;
        let n = g.add(gi_n, rn)?;
        let n = g.act(n, Activation::Tanh);
        // h' = n + u * (h - n)
        let diff = g.sub(h, n)?;
        let gated = g.mul(u, diff)?;
        g.add(n, gated)
    }
}

/// One recurrent update for a single state vector.
pub fn gru_step(cell: &GruCell, params: &ParamSet, h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let hd = cell.state_dim;
    if h.len() != hd {
        return Err(shape_err("gru_step state", hd, h.len()));
    }
    if x.len() != cell.input_dim {
        return Err(shape_err("gru_step input", cell.input_dim, x.len()));
    }
    let w_ih = &params.get(cell.w_ih).values;
    let w_hh = &params.get(cell.w_hh).values;
    let b_ih = &params.get(cell.b_ih).values;
    let b_hh = &params.get(cell.b_hh).values;
    let inp = cell.input_dim;
    let gi = |row: usize| b_ih[row] + dot(&w_ih[row * inp..(row + 1) * inp], x);
    let gh = |row: usize| b_hh[row] + dot(&w_hh[row * hd..(row + 1) * hd], h);
    Ok((0..hd)
        .map(|k| {
            let r = sigmoid(gi(k) + gh(k));
            let u = sigmoid(gi(hd + k) + gh(hd + k));
            let n = (gi(2 * hd + k) + r * gh(2 * hd + k)).tanh();
            n + u * (h[k] - n)
        })
        .collect())
}

/// Batched plain forward of an MLP over the rows of `x`, used for encoding
/// many windows at once outside of training.
pub fn mlp_forward_batch(mlp: &Mlp, params: &ParamSet, x: &Mat) -> Result<Mat> {
    let mut g = Graph::new(params);
    let xv = g.input(x.clone());
    let y = mlp.forward_graph(&mut g, xv)?;
    Ok(g.value(y).clone())
}
