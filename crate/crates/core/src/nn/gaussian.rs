//! Diagonal Gaussian algebra shared by every stochastic head.
//!
//! The row kernels here are used both by the plain functions and by the
//! differentiable graph ops, so the two paths evaluate identical formulas.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;
pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Mean and diagonal log-variance of a Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianParams {
    /// Builds the pair, clamping log-variances into `[-10, 10]`.
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(shape_err("GaussianParams", mean.len(), log_var.len()));
        }
        let log_var = log_var.into_iter().map(clamp_log_var).collect();
        Ok(Self { mean, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| lv.exp()).collect()
    }
}

#[inline]
pub fn clamp_log_var(lv: f64) -> f64 {
    lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn kl_row(qm: &[f64], qlv: &[f64], pm: &[f64], plv: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..qm.len() {
        let d = qm[i] - pm[i];
        acc += plv[i] - qlv[i] + ((qlv[i]).exp() + d * d) / plv[i].exp() - 1.0;
    }
    0.5 * acc
}

pub(crate) fn loglik_row(x: &[f64], m: &[f64], lv: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        let d = x[i] - m[i];
        acc += LN_2PI + lv[i] + d * d / lv[i].exp();
    }
    -0.5 * acc
}

/// Log-density of `x` under a diagonal Gaussian.
fn log_density(x: &[f64], m: &[f64], lv: &[f64]) -> f64 {
    loglik_row(x, m, lv)
}

/// Monte-Carlo Jensen-Shannon estimate for one pair of rows.
///
/// `noise_p` and `noise_q` hold `samples` consecutive standard-normal
/// vectors of length `m.len()` each.
pub(crate) fn jsd_row(
    pm: &[f64],
    plv: &[f64],
    qm: &[f64],
    qlv: &[f64],
    noise_p: &[f64],
    noise_q: &[f64],
    samples: usize,
) -> f64 {
    let d = pm.len();
    let mut x = vec![0.0; d];
    let mut acc = 0.0;
    for s in 0..samples {
        let eps = &noise_p[s * d..(s + 1) * d];
        for i in 0..d {
            x[i] = pm[i] + (0.5 * plv[i]).exp() * eps[i];
        }
        let lp = log_density(&x, pm, plv);
        let lq = log_density(&x, qm, qlv);
        acc += std::f64::consts::LN_2 - softplus(lq - lp);

        let eps = &noise_q[s * d..(s + 1) * d];
        for i in 0..d {
            x[i] = qm[i] + (0.5 * qlv[i]).exp() * eps[i];
        }
        let lp = log_density(&x, pm, plv);
        let lq = log_density(&x, qm, qlv);
        acc += std::f64::consts::LN_2 - softplus(lp - lq);
    }
    0.5 * acc / samples as f64
}

/// Accumulates the gradient of `scale * jsd_row(..)` into the four
/// parameter gradient rows.
#[allow(clippy::too_many_arguments)]
pub(crate) fn jsd_row_grad(
    pm: &[f64],
    plv: &[f64],
    qm: &[f64],
    qlv: &[f64],
    noise_p: &[f64],
    noise_q: &[f64],
    samples: usize,
    scale: f64,
    g_pm: &mut [f64],
    g_plv: &mut [f64],
    g_qm: &mut [f64],
    g_qlv: &mut [f64],
) {
    let d = pm.len();
    let sp: Vec<f64> = plv.iter().map(|lv| (0.5 * lv).exp()).collect();
    let sq: Vec<f64> = qlv.iter().map(|lv| (0.5 * lv).exp()).collect();
    let vp: Vec<f64> = plv.iter().map(|lv| lv.exp()).collect();
    let vq: Vec<f64> = qlv.iter().map(|lv| lv.exp()).collect();
    let coef = 0.5 * scale / samples as f64;
    let mut x = vec![0.0; d];
    for s in 0..samples {
        // Sample drawn from p: term = ln2 - softplus(lq(x) - lp(x)).
        let eps = &noise_p[s * d..(s + 1) * d];
        for i in 0..d {
            x[i] = pm[i] + sp[i] * eps[i];
        }
        let lp = log_density(&x, pm, plv);
        let lq = log_density(&x, qm, qlv);
        let g = -coef * sigmoid(lq - lp);
        for i in 0..d {
            let diff = x[i] - qm[i];
            let r = diff / vq[i];
            // d lq / d x = -r ; d lp / d x vanishes under reparameterization
            g_pm[i] += g * (-r);
            g_plv[i] += g * (-0.5 * r * sp[i] * eps[i] + 0.5);
            g_qm[i] += g * r;
            g_qlv[i] += g * (-0.5 + 0.5 * diff * diff / vq[i]);
        }

        // Sample drawn from q: term = ln2 - softplus(lp(x) - lq(x)).
        let eps = &noise_q[s * d..(s + 1) * d];
        for i in 0..d {
            x[i] = qm[i] + sq[i] * eps[i];
        }
        let lp = log_density(&x, pm, plv);
        let lq = log_density(&x, qm, qlv);
        let g = -coef * sigmoid(lp - lq);
        for i in 0..d {
            let diff = x[i] - pm[i];
            let r = diff / vp[i];
            g_qm[i] += g * (-r);
            g_qlv[i] += g * (-0.5 * r * sq[i] * eps[i] + 0.5);
            g_pm[i] += g * r;
            g_plv[i] += g * (-0.5 + 0.5 * diff * diff / vp[i]);
        }
    }
}

/// Closed-form `KL(q || p)` between diagonal Gaussians, summed over dims.
pub fn kl_diag_gaussian(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(shape_err("kl_diag_gaussian", q.dim(), p.dim()));
    }
    Ok(kl_row(&q.mean, &q.log_var, &p.mean, &p.log_var))
}

/// Sum of per-dimension diagonal-Gaussian log densities of `x`.
pub fn gaussian_loglik(x: &[f64], g: &GaussianParams) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(shape_err("gaussian_loglik", g.dim(), x.len()));
    }
    Ok(loglik_row(x, &g.mean, &g.log_var))
}

/// `mean + exp(log_var / 2) * noise`.
pub fn reparameterize(g: &GaussianParams, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dim() {
        return Err(shape_err("reparameterize", g.dim(), noise.len()));
    }
    Ok(g.mean
        .iter()
        .zip(&g.log_var)
        .zip(noise)
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect())
}

/// Draws `n` standard-normal values.
pub fn standard_normal_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Monte-Carlo Jensen-Shannon divergence between two diagonal Gaussians,
/// using reparameterized samples from both and exact log-densities.
/// Deterministic for a fixed `seed`.
pub fn jsd_mc(p: &GaussianParams, q: &GaussianParams, num_samples: usize, seed: u64) -> Result<f64> {
    use rand::SeedableRng;
    if p.dim() != q.dim() {
        return Err(shape_err("jsd_mc", p.dim(), q.dim()));
    }
    if num_samples == 0 {
        return Err(Error::InvalidArgument("jsd_mc needs at least one sample".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise_p = standard_normal_vec(&mut rng, num_samples * p.dim());
    let noise_q = standard_normal_vec(&mut rng, num_samples * p.dim());
    Ok(jsd_row(
        &p.mean,
        &p.log_var,
        &q.mean,
        &q.log_var,
        &noise_p,
        &noise_q,
        num_samples,
    ))
}
