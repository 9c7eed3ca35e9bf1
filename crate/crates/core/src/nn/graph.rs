//! Reverse-mode differentiation over a tape of registered primitives.
//!
//! A [`Graph`] records every op applied to [`Var`] handles together with its
//! forward value. [`Graph::backward`] walks the tape in reverse and returns
//! exact partial derivatives of a scalar output for every parameter tensor.

use serde::{Deserialize, Serialize};

use super::gaussian::{jsd_row, jsd_row_grad, kl_row, loglik_row, sigmoid};
use super::mat::{gemm, Mat};
use super::param::{ParamId, ParamSet};
use crate::error::{shape_err, Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug)]
enum Op {
    Param(ParamId),
    Input,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { a: Var, scale: f64 },
    Act(Var, Activation),
    Exp(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    Concat(Var, Var),
    Slice { a: Var, start: usize },
    SumAll(Var),
    RowSum(Var),
    WeightedSum { a: Var, weights: Vec<f64> },
    KlDiag { qm: Var, qlv: Var, pm: Var, plv: Var },
    LogLik { x: Var, m: Var, lv: Var },
    Reparam { m: Var, lv: Var, noise: Mat },
    Jsd { pm: Var, plv: Var, qm: Var, qlv: Var, noise_p: Mat, noise_q: Mat, samples: usize },
}

struct Node {
    op: Op,
    value: Mat,
}

/// Gradients aligned with the tensors of the [`ParamSet`] a graph was built on.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Grads(params.iter().map(|t| vec![0.0; t.len()]).collect())
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.0[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Tape of operations over a borrowed parameter set.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn same_shape(op: &'static str, a: &Mat, b: &Mat) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameter tensor as a matrix: 2-D tensors keep their shape, 1-D
    /// tensors become a row vector. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let t = self.params.get(id);
        let (r, c) = match t.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => (1, s.iter().product()),
        };
        let v = self.push(Op::Param(id), Mat::from_vec(r, c, t.values.clone()));
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, m: Mat) -> Var {
        self.push(Op::Input, m)
    }

    /// `x W^T + b` for a batch `x` (B x in) and weight `W` (out x in).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.cols() {
            return Err(shape_err("linear", format!("input width {}", wv.cols()), xv.cols()));
        }
        let (bsz, inp, out) = (xv.rows(), xv.cols(), wv.rows());
        let mut y = Mat::zeros(bsz, out);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.rows() * bv.cols() != out {
                return Err(shape_err("linear bias", out, bv.rows() * bv.cols()));
            }
            for r in 0..bsz {
                y.row_mut(r).copy_from_slice(bv.data());
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        gemm(bsz, inp, out, 1.0, xv.data(), false, wv.data(), true, beta, y.data_mut());
        Ok(self.push(Op::Linear { x, w, b }, y))
    }

    fn zip_op(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(name, av, bv)?;
        Ok(Mat::from_vec(
            av.rows(),
            av.cols(),
            av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect(),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_op("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_op("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_op("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(Op::Affine { a, scale }, v)
    }

    pub fn act(&mut self, a: Var, act: Activation) -> Var {
        let v = self.value(a).map(|x| act.apply(x));
        self.push(Op::Act(a, act), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp { a, lo, hi }, v)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(shape_err("concat", av.rows(), bv.rows()));
        }
        let cols = av.cols() + bv.cols();
        let mut out = Vec::with_capacity(av.rows() * cols);
        for r in 0..av.rows() {
            out.extend_from_slice(av.row(r));
            out.extend_from_slice(bv.row(r));
        }
        let m = Mat::from_vec(av.rows(), cols, out);
        Ok(self.push(Op::Concat(a, b), m))
    }

    /// Columns `start..start+len` of `a`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(shape_err("slice", format!("<= {} columns", av.cols()), start + len));
        }
        let mut out = Vec::with_capacity(av.rows() * len);
        for r in 0..av.rows() {
            out.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let m = Mat::from_vec(av.rows(), len, out);
        Ok(self.push(Op::Slice { a, start }, m))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::SumAll(a), Mat::from_vec(1, 1, vec![s]))
    }

    /// Per-row sums, `B x 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v: Vec<f64> = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        let m = Mat::from_vec(av.rows(), 1, v);
        self.push(Op::RowSum(a), m)
    }

    /// `sum_i weights[i] * a[i]` over all entries of `a`.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        let av = self.value(a);
        if av.data().len() != weights.len() {
            return Err(shape_err("weighted_sum", av.data().len(), weights.len()));
        }
        let s = av.data().iter().zip(&weights).map(|(x, w)| x * w).sum();
        Ok(self.push(Op::WeightedSum { a, weights }, Mat::from_vec(1, 1, vec![s])))
    }

    /// Row-wise `KL(q || p)` of diagonal Gaussians, `B x 1`.
    pub fn kl_diag(&mut self, qm: Var, qlv: Var, pm: Var, plv: Var) -> Result<Var> {
        let shapes = [qm, qlv, pm, plv].map(|v| self.value(v).shape());
        if shapes.iter().any(|s| *s != shapes[0]) {
            return Err(shape_err("kl_diag", format!("{:?}", shapes[0]), format!("{shapes:?}")));
        }
        let rows = shapes[0].0;
        let v: Vec<f64> = (0..rows)
            .map(|r| {
                kl_row(
                    self.value(qm).row(r),
                    self.value(qlv).row(r),
                    self.value(pm).row(r),
                    self.value(plv).row(r),
                )
            })
            .collect();
        Ok(self.push(Op::KlDiag { qm, qlv, pm, plv }, Mat::from_vec(rows, 1, v)))
    }

    /// Row-wise diagonal-Gaussian log-likelihood of `x`, `B x 1`.
    pub fn loglik(&mut self, x: Var, m: Var, lv: Var) -> Result<Var> {
        let shapes = [x, m, lv].map(|v| self.value(v).shape());
        if shapes.iter().any(|s| *s != shapes[0]) {
            return Err(shape_err("loglik", format!("{:?}", shapes[0]), format!("{shapes:?}")));
        }
        let rows = shapes[0].0;
        let v: Vec<f64> = (0..rows)
            .map(|r| loglik_row(self.value(x).row(r), self.value(m).row(r), self.value(lv).row(r)))
            .collect();
        Ok(self.push(Op::LogLik { x, m, lv }, Mat::from_vec(rows, 1, v)))
    }

    /// `m + exp(lv / 2) * noise` with constant standard-normal `noise`.
    pub fn reparam(&mut self, m: Var, lv: Var, noise: Mat) -> Result<Var> {
        let (mv, lvv) = (self.value(m), self.value(lv));
        same_shape("reparam", mv, lvv)?;
        same_shape("reparam noise", mv, &noise)?;
        let v: Vec<f64> = mv
            .data()
            .iter()
            .zip(lvv.data())
            .zip(noise.data())
            .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
            .collect();
        let out = Mat::from_vec(mv.rows(), mv.cols(), v);
        Ok(self.push(Op::Reparam { m, lv, noise }, out))
    }

    /// Row-wise Monte-Carlo Jensen-Shannon divergence, `B x 1`. Noise
    /// matrices are `B x (samples * d)`.
    pub fn jsd(
        &mut self,
        (pm, plv): (Var, Var),
        (qm, qlv): (Var, Var),
        noise_p: Mat,
        noise_q: Mat,
        samples: usize,
    ) -> Result<Var> {
        let shapes = [pm, plv, qm, qlv].map(|v| self.value(v).shape());
        if shapes.iter().any(|s| *s != shapes[0]) {
            return Err(shape_err("jsd", format!("{:?}", shapes[0]), format!("{shapes:?}")));
        }
        let (rows, d) = shapes[0];
        for n in [&noise_p, &noise_q] {
            if n.shape() != (rows, samples * d) {
                return Err(shape_err("jsd noise", format!("{:?}", (rows, samples * d)), format!("{:?}", n.shape())));
            }
        }
        if samples == 0 {
            return Err(Error::InvalidArgument("jsd needs at least one sample".into()));
        }
        let v: Vec<f64> = (0..rows)
            .map(|r| {
                jsd_row(
                    self.value(pm).row(r),
                    self.value(plv).row(r),
                    self.value(qm).row(r),
                    self.value(qlv).row(r),
                    noise_p.row(r),
                    noise_q.row(r),
                    samples,
                )
            })
            .collect();
        Ok(self.push(
            Op::Jsd {
                pm,
                plv,
                qm,
                qlv,
                noise_p,
                noise_q,
                samples,
            },
            Mat::from_vec(rows, 1, v),
        ))
    }

    /// Exact gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        if let Some(i) = self.nodes[..=loss.0].iter().position(|n| !n.value.is_finite()) {
            return Err(Error::NonFinite(format!("forward value of node {i} ({:?})", op_name(&self.nodes[i].op))));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Grads::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (o, g) in out.0[id.0].iter_mut().zip(&dy) {
                        *o += g;
                    }
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (bsz, inp, outd) = (xv.rows(), xv.cols(), wv.rows());
                    let mut dx = vec![0.0; bsz * inp];
                    gemm(bsz, outd, inp, 1.0, &dy, false, wv.data(), false, 0.0, &mut dx);
                    accumulate(&mut grads, *x, dx);
                    let mut dw = vec![0.0; outd * inp];
                    gemm(outd, bsz, inp, 1.0, &dy, true, xv.data(), false, 0.0, &mut dw);
                    accumulate(&mut grads, *w, dw);
                    if let Some(b) = b {
                        let mut db = vec![0.0; outd];
                        for r in 0..bsz {
                            for (acc, g) in db.iter_mut().zip(&dy[r * outd..(r + 1) * outd]) {
                                *acc += g;
                            }
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, dy.clone());
                    accumulate(&mut grads, *b, dy);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, dy.clone());
                    accumulate(&mut grads, *b, dy.iter().map(|g| -g).collect());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = dy.iter().zip(bv.data()).map(|(g, v)| g * v).collect();
                    let db = dy.iter().zip(av.data()).map(|(g, v)| g * v).collect();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Affine { a, scale } => {
                    accumulate(&mut grads, *a, dy.iter().map(|g| g * scale).collect());
                }
                Op::Act(a, act) => {
                    let da = dy.iter().zip(y.data()).map(|(g, y)| g * act.grad_from_output(*y)).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Exp(a) => {
                    let da = dy.iter().zip(y.data()).map(|(g, y)| g * y).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Clamp { a, lo, hi } => {
                    let av = self.value(*a);
                    let da = dy
                        .iter()
                        .zip(av.data())
                        .map(|(g, x)| if x > lo && x < hi { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Concat(a, b) => {
                    let (ac, bc) = (self.value(*a).cols(), self.value(*b).cols());
                    let rows = y.rows();
                    let mut da = Vec::with_capacity(rows * ac);
                    let mut db = Vec::with_capacity(rows * bc);
                    for r in 0..rows {
                        let row = &dy[r * (ac + bc)..(r + 1) * (ac + bc)];
                        da.extend_from_slice(&row[..ac]);
                        db.extend_from_slice(&row[ac..]);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Slice { a, start } => {
                    let av = self.value(*a);
                    let len = y.cols();
                    let mut da = vec![0.0; av.rows() * av.cols()];
                    for r in 0..av.rows() {
                        let dst = r * av.cols() + start;
                        da[dst..dst + len].copy_from_slice(&dy[r * len..(r + 1) * len]);
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::SumAll(a) => {
                    let n = self.value(*a).data().len();
                    accumulate(&mut grads, *a, vec![dy[0]; n]);
                }
                Op::RowSum(a) => {
                    let av = self.value(*a);
                    let mut da = Vec::with_capacity(av.rows() * av.cols());
                    for g in dy.iter().take(av.rows()) {
                        da.extend(std::iter::repeat(*g).take(av.cols()));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::WeightedSum { a, weights } => {
                    accumulate(&mut grads, *a, weights.iter().map(|w| w * dy[0]).collect());
                }
                Op::KlDiag { qm, qlv, pm, plv } => {
                    let (qmv, qlvv, pmv, plvv) = (self.value(*qm), self.value(*qlv), self.value(*pm), self.value(*plv));
                    let n = qmv.data().len();
                    let d = qmv.cols();
                    let (mut g_qm, mut g_qlv, mut g_pm, mut g_plv) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                    for i in 0..n {
                        let g = dy[i / d];
                        let diff = qmv.data()[i] - pmv.data()[i];
                        let vp = plvv.data()[i].exp();
                        let vq = qlvv.data()[i].exp();
                        g_qm[i] = g * diff / vp;
                        g_pm[i] = -g * diff / vp;
                        g_qlv[i] = g * 0.5 * (vq / vp - 1.0);
                        g_plv[i] = g * 0.5 * (1.0 - (vq + diff * diff) / vp);
                    }
                    accumulate(&mut grads, *qm, g_qm);
                    accumulate(&mut grads, *qlv, g_qlv);
                    accumulate(&mut grads, *pm, g_pm);
                    accumulate(&mut grads, *plv, g_plv);
                }
                Op::LogLik { x, m, lv } => {
                    let (xv, mv, lvv) = (self.value(*x), self.value(*m), self.value(*lv));
                    let n = xv.data().len();
                    let d = xv.cols();
                    let (mut g_x, mut g_m, mut g_lv) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                    for i in 0..n {
                        let g = dy[i / d];
                        let diff = xv.data()[i] - mv.data()[i];
                        let var = lvv.data()[i].exp();
                        g_x[i] = -g * diff / var;
                        g_m[i] = g * diff / var;
                        g_lv[i] = g * (-0.5 + 0.5 * diff * diff / var);
                    }
                    accumulate(&mut grads, *x, g_x);
                    accumulate(&mut grads, *m, g_m);
                    accumulate(&mut grads, *lv, g_lv);
                }
                Op::Reparam { m, lv, noise } => {
                    let lvv = self.value(*lv);
                    let g_lv = dy
                        .iter()
                        .zip(lvv.data())
                        .zip(noise.data())
                        .map(|((g, lv), n)| g * 0.5 * (0.5 * lv).exp() * n)
                        .collect();
                    accumulate(&mut grads, *m, dy);
                    accumulate(&mut grads, *lv, g_lv);
                }
                Op::Jsd {
                    pm,
                    plv,
                    qm,
                    qlv,
                    noise_p,
                    noise_q,
                    samples,
                } => {
                    let (pmv, plvv, qmv, qlvv) = (self.value(*pm), self.value(*plv), self.value(*qm), self.value(*qlv));
                    let (rows, d) = pmv.shape();
                    let mut gs = [vec![0.0; rows * d], vec![0.0; rows * d], vec![0.0; rows * d], vec![0.0; rows * d]];
                    for r in 0..rows {
                        let span = r * d..(r + 1) * d;
                        let [g0, g1, g2, g3] = &mut gs;
                        jsd_row_grad(
                            pmv.row(r),
                            plvv.row(r),
                            qmv.row(r),
                            qlvv.row(r),
                            noise_p.row(r),
                            noise_q.row(r),
                            *samples,
                            dy[r],
                            &mut g0[span.clone()],
                            &mut g1[span.clone()],
                            &mut g2[span.clone()],
                            &mut g3[span],
                        );
                    }
                    let [g0, g1, g2, g3] = gs;
                    accumulate(&mut grads, *pm, g0);
                    accumulate(&mut grads, *plv, g1);
                    accumulate(&mut grads, *qm, g2);
                    accumulate(&mut grads, *qlv, g3);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Param(_) => "param",
        Op::Input => "input",
        Op::Linear { .. } => "linear",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Affine { .. } => "affine",
        Op::Act(..) => "activation",
        Op::Exp(_) => "exp",
        Op::Clamp { .. } => "clamp",
        Op::Concat(..) => "concat",
        Op::Slice { .. } => "slice",
        Op::SumAll(_) => "sum",
        Op::RowSum(_) => "row_sum",
        Op::WeightedSum { .. } => "weighted_sum",
        Op::KlDiag { .. } => "kl_diag",
        Op::LogLik { .. } => "loglik",
        Op::Reparam { .. } => "reparam",
        Op::Jsd { .. } => "jsd",
    }
}
