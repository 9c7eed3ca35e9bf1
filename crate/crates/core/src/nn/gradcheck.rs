//! Central finite differences over a parameter set, for checking the tape.

use super::graph::Grads;
use super::param::ParamSet;

/// Numerical gradient of `f` at `params` using central differences.
pub fn central_differences(params: &ParamSet, step: f64, f: impl Fn(&ParamSet) -> f64) -> Grads {
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for ti in 0..params.len() {
        let n = params.iter().nth(ti).map_or(0, |t| t.len());
        let mut g = vec![0.0; n];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = work.iter().nth(ti).unwrap().values[j];
            work.iter_mut().nth(ti).unwrap().values[j] = orig + step;
            let up = f(&work);
            work.iter_mut().nth(ti).unwrap().values[j] = orig - step;
            let down = f(&work);
            work.iter_mut().nth(ti).unwrap().values[j] = orig;
            *gj = (up - down) / (2.0 * step);
        }
        out.push(g);
    }
    Grads(out)
}

/// Largest per-tensor relative error `|a - n| / max(|a|, |n|)` in the
/// Euclidean norm. Tensors whose gradients are both below `1e-10` in norm
/// count as exact.
pub fn max_relative_error(analytic: &Grads, numeric: &Grads) -> f64 {
    analytic
        .0
        .iter()
        .zip(&numeric.0)
        .map(|(a, n)| {
            let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = na.max(nn);
            if scale < 1e-10 {
                0.0
            } else {
                diff / scale
            }
        })
        .fold(0.0, f64::max)
}
