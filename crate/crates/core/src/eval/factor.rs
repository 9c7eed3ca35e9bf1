//! Maximum-likelihood factor analysis by EM on standardized data.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorConfig {
    pub n_factors: usize,
    pub max_iter: usize,
    /// Stop when the per-sample log-likelihood changes by less than this.
    pub tol: f64,
    /// Lower bound of the unique variances.
    pub psi_floor: f64,
    /// Added to the covariance diagonal when there are no more samples than
    /// dimensions.
    pub ridge: f64,
}

impl Default for FactorConfig {
    fn default() -> Self {
        Self {
            n_factors: 2,
            max_iter: 500,
            tol: 1e-8,
            psi_floor: 1e-6,
            ridge: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorModel {
    /// `dims x n_factors`, columns ordered by explained variance.
    pub loadings: Mat,
    pub unique_variances: Vec<f64>,
    /// `T x n_factors` regression-method scores.
    pub scores: Mat,
    /// Share of the total standardized variance per factor.
    pub explained: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

fn to_mat(m: &DMatrix<f64>) -> Mat {
    Mat::from_vec(m.nrows(), m.ncols(), (0..m.nrows()).flat_map(|r| m.row(r).iter().copied().collect::<Vec<_>>()).collect())
}

/// Column-standardized copy of `data` (population std; constant columns are
/// only centered).
pub fn standardize(data: &Mat) -> DMatrix<f64> {
    let (t, p) = (data.rows(), data.cols());
    let mut x = DMatrix::from_fn(t, p, |r, c| data.get(r, c));
    for c in 0..p {
        let mean = x.column(c).mean();
        let var = x.column(c).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        x.column_mut(c).iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    x
}

fn log_likelihood(s: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let p = s.nrows() as f64;
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NonFinite("factor model covariance".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inv = chol.inverse();
    let tr = (&inv * s).trace();
    Ok((-0.5 * (p * (2.0 * std::f64::consts::PI).ln() + log_det + tr), inv))
}

/// Fits `n_factors` factors to the standardized columns of `data`
/// (`T x dims`). The solution is rotated so `L' Psi^-1 L` is diagonal, then
/// columns are ordered by sum of squared loadings and signed so their
/// largest-magnitude loading is positive.
pub fn factor_analysis(data: &Mat, config: &FactorConfig) -> Result<FactorModel> {
    let (t, p, k) = (data.rows(), data.cols(), config.n_factors);
    if k == 0 || k >= p || t < 2 {
        return Err(Error::InvalidArgument(format!(
            "factor analysis of {t} x {p} data with {k} factors needs 0 < factors < dims and at least two samples"
        )));
    }
    if data.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("factor analysis input".into()));
    }
    let x = standardize(data);
    let mut s = x.transpose() * &x / t as f64;
    if t <= p {
        for i in 0..p {
            s[(i, i)] += config.ridge;
        }
    }

    let eig = SymmetricEigen::new(s.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let rest: f64 = order[k..].iter().map(|&i| eig.eigenvalues[i]).sum::<f64>() / (p - k) as f64;
    let mut lambda = DMatrix::from_fn(p, k, |r, c| {
        let i = order[c];
        eig.eigenvectors[(r, i)] * (eig.eigenvalues[i] - rest).max(1e-6).sqrt()
    });
    let mut psi: Vec<f64> = (0..p)
        .map(|i| (s[(i, i)] - lambda.row(i).norm_squared()).max(config.psi_floor))
        .collect();

    let sigma_of = |l: &DMatrix<f64>, psi: &[f64]| {
        let mut sig = l * l.transpose();
        for (i, v) in psi.iter().enumerate() {
            sig[(i, i)] += v;
        }
        sig
    };
    let (mut ll, mut inv) = log_likelihood(&s, &sigma_of(&lambda, &psi))?;
    let mut iterations = 0;
    for it in 0..config.max_iter {
        iterations = it + 1;
        let beta = lambda.transpose() * &inv;
        let ezz = DMatrix::identity(k, k) - &beta * &lambda + &beta * &s * beta.transpose();
        let ezz_inv = ezz
            .try_inverse()
            .ok_or_else(|| Error::NonFinite("factor second moment".into()))?;
        let new_lambda = &s * beta.transpose() * ezz_inv;
        let lbs = &new_lambda * &beta * &s;
        psi = (0..p).map(|i| (s[(i, i)] - lbs[(i, i)]).max(config.psi_floor)).collect();
        lambda = new_lambda;
        let (next, next_inv) = log_likelihood(&s, &sigma_of(&lambda, &psi))?;
        let change = (next - ll).abs();
        ll = next;
        inv = next_inv;
        if change < config.tol {
            break;
        }
    }

    let psi_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(p, psi.iter().map(|v| 1.0 / v)));
    let m = lambda.transpose() * &psi_inv * &lambda;
    let rot = SymmetricEigen::new(m).eigenvectors;
    let rotated = &lambda * rot;
    let mut cols: Vec<(f64, usize)> = (0..k).map(|c| (rotated.column(c).norm_squared(), c)).collect();
    cols.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut loadings = DMatrix::zeros(p, k);
    for (dst, &(_, src)) in cols.iter().enumerate() {
        let col = rotated.column(src);
        let peak = col.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
        let sign = if peak < 0.0 { -1.0 } else { 1.0 };
        loadings.set_column(dst, &(col * sign));
    }
    let scores = &x * &inv * &loadings;
    let explained = (0..k).map(|c| loadings.column(c).norm_squared() / p as f64).collect();
    Ok(FactorModel {
        loadings: to_mat(&loadings),
        unique_variances: psi,
        scores: to_mat(&scores),
        explained,
        log_likelihood: ll,
        iterations,
    })
}
