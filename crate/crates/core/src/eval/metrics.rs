//! Prediction error metrics.

use serde::{Deserialize, Serialize};

use crate::data::Normalizer;
use crate::error::{shape_err, Error, Result};

/// Root-mean-square error per prediction offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonCurve {
    /// Entry `k` is the error at offset `k + 1`.
    pub values: Vec<f64>,
    pub units: String,
}

/// RMS error per offset over matched windows (`w` frames of `dims` values
/// each): entry `k` is `sqrt(mean over windows and dims of (pred - truth)^2)`
/// at frame `k`.
pub fn mspe_curve(predicted: &[Vec<Vec<f64>>], truth: &[Vec<Vec<f64>>], units: &str) -> Result<HorizonCurve> {
    if predicted.len() != truth.len() {
        return Err(shape_err("mspe windows", truth.len(), predicted.len()));
    }
    let w = truth.first().map_or(0, Vec::len);
    if w == 0 {
        return Err(Error::InsufficientData("no windows to score".into()));
    }
    let mut sum = vec![0.0; w];
    let mut count = vec![0usize; w];
    for (p, t) in predicted.iter().zip(truth) {
        if p.len() != w || t.len() != w {
            return Err(shape_err("mspe window length", w, p.len().min(t.len())));
        }
        for (k, (pf, tf)) in p.iter().zip(t).enumerate() {
            if pf.len() != tf.len() {
                return Err(shape_err("mspe frame", tf.len(), pf.len()));
            }
            sum[k] += pf.iter().zip(tf).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            count[k] += tf.len();
        }
    }
    Ok(HorizonCurve {
        values: sum.iter().zip(&count).map(|(s, &n)| (s / n as f64).sqrt()).collect(),
        units: units.into(),
    })
}

/// Normalized root-mean-square deviation of joint `joint`: the mean over
/// trials of `sqrt(sum_t (x - x_hat)^2 / (T * (j_max - j_min)))`, with the
/// range taken from the training normalizer and kept inside the root.
pub fn nrmsd(predicted: &[Vec<Vec<f64>>], truth: &[Vec<Vec<f64>>], normalizer: &Normalizer, joint: usize) -> Result<f64> {
    if joint >= normalizer.dims() {
        return Err(shape_err("nrmsd joint", normalizer.dims(), joint));
    }
    let range = normalizer.max[joint] - normalizer.min[joint];
    if !(range > 0.0) {
        return Err(Error::InvalidArgument(format!("joint {joint} has a degenerate training range")));
    }
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(shape_err("nrmsd trials", truth.len(), predicted.len()));
    }
    let mut total = 0.0;
    for (p, t) in predicted.iter().zip(truth) {
        if p.len() != t.len() || t.is_empty() {
            return Err(shape_err("nrmsd trial length", t.len(), p.len()));
        }
        let sq: f64 = p.iter().zip(t).map(|(a, b)| (a[joint] - b[joint]).powi(2)).sum();
        total += (sq / (t.len() as f64 * range)).sqrt();
    }
    Ok(total / truth.len() as f64)
}
