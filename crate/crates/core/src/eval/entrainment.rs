//! Lagged coupling between the oscillation factors of two latent streams.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::eval::factor::{factor_analysis, FactorConfig};
use crate::nn::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntrainmentConfig {
    /// Factor compared across streams, 1-based.
    pub factor: usize,
    pub max_lag: usize,
    pub permutations: usize,
    /// Quantile of the shuffled maxima used as the threshold.
    pub quantile: f64,
    pub factors: FactorConfig,
}

impl Default for EntrainmentConfig {
    fn default() -> Self {
        Self {
            factor: 2,
            max_lag: 20,
            permutations: 1000,
            quantile: 0.95,
            factors: FactorConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaggedCorrelation {
    /// Largest `|corr(a_t, b_{t+lag})|`.
    pub corr: f64,
    pub lag: i64,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Maximum absolute Pearson correlation of `a_t` with `b_{t+lag}` over the
/// overlap, for `|lag| <= max_lag`. Ties keep the smallest `|lag|`.
pub fn max_cross_correlation(a: &[f64], b: &[f64], max_lag: usize) -> Result<LaggedCorrelation> {
    if a.len() != b.len() {
        return Err(shape_err("cross-correlation", a.len(), b.len()));
    }
    if a.len() < max_lag + 3 {
        return Err(Error::InsufficientData(format!("{} samples for lags up to {max_lag}", a.len())));
    }
    let n = a.len();
    let mut best = LaggedCorrelation { corr: -1.0, lag: 0 };
    let lags = (0..=max_lag as i64).flat_map(|l| if l == 0 { vec![0] } else { vec![-l, l] });
    for lag in lags {
        let (sa, sb) = if lag >= 0 {
            (&a[..n - lag as usize], &b[lag as usize..])
        } else {
            (&a[(-lag) as usize..], &b[..n - (-lag) as usize])
        };
        let c = pearson(sa, sb).abs();
        if c > best.corr {
            best = LaggedCorrelation { corr: c, lag };
        }
    }
    Ok(best)
}

/// Quantile of the maximum cross-correlation after shuffling `b` in time,
/// over `permutations` shuffles seeded by `seed`.
pub fn permutation_threshold(a: &[f64], b: &[f64], max_lag: usize, permutations: usize, quantile: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = b.to_vec();
    let mut maxima = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        shuffled.shuffle(&mut rng);
        maxima.push(max_cross_correlation(a, &shuffled, max_lag)?.corr);
    }
    if maxima.is_empty() {
        return Err(Error::InvalidArgument("permutation threshold needs at least one shuffle".into()));
    }
    maxima.sort_by(f64::total_cmp);
    let idx = ((quantile * maxima.len() as f64).ceil() as usize).clamp(1, maxima.len()) - 1;
    Ok(maxima[idx])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntrainmentScore {
    pub corr: f64,
    pub lag: i64,
    /// Permutation threshold of the same statistic.
    pub threshold: f64,
}

/// Fits factor models to both `T x dims` streams independently and compares
/// the configured factor's scores across lags.
pub fn entrainment_score(human: &Mat, robot: &Mat, config: &EntrainmentConfig, seed: u64) -> Result<EntrainmentScore> {
    if human.rows() != robot.rows() {
        return Err(shape_err("entrainment streams", human.rows(), robot.rows()));
    }
    if config.factor == 0 || config.factor > config.factors.n_factors {
        return Err(Error::InvalidArgument("entrainment factor out of range".into()));
    }
    let col = config.factor - 1;
    let a: Vec<f64> = factor_analysis(human, &config.factors)?.scores.col(col);
    let b: Vec<f64> = factor_analysis(robot, &config.factors)?.scores.col(col);
    let best = max_cross_correlation(&a, &b, config.max_lag)?;
    let threshold = permutation_threshold(&a, &b, config.max_lag, config.permutations, config.quantile, seed)?;
    Ok(EntrainmentScore {
        corr: best.corr,
        lag: best.lag,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(n: usize, shift: usize) -> Vec<f64> {
        (0..n).map(|t| ((t as f64 - shift as f64) * 0.21).sin() + 0.3 * ((t as f64 - shift as f64) * 0.05).cos()).collect()
    }

    #[test]
    fn identical_and_delayed() {
        let a = wave(200, 0);
        let same = max_cross_correlation(&a, &a, 20).unwrap();
        assert!((same.corr - 1.0).abs() < 1e-12 && same.lag == 0);
        let delayed = max_cross_correlation(&a, &wave(200, 5), 20).unwrap();
        assert_eq!(delayed.lag, 5);
        let flipped: Vec<f64> = a.iter().map(|v| -3.0 * v + 1.0).collect();
        assert!((max_cross_correlation(&a, &flipped, 20).unwrap().corr - 1.0).abs() < 1e-12);
    }
}
