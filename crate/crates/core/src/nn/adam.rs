use serde::{Deserialize, Serialize};

use super::graph::Grads;
use super::param::ParamSet;
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            config,
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) -> Result<()> {
        if grads.0.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(shape_err("adam_step", params.len(), grads.0.len()));
        }
        for (i, t) in params.iter().enumerate() {
            if grads.0[i].len() != t.len() || self.first_moment[i].len() != t.len() {
                return Err(shape_err("adam_step tensor", t.len(), grads.0[i].len()));
            }
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - beta2.powi(self.step_count as i32);
        for (i, t) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.first_moment[i], &mut self.second_moment[i], &grads.0[i]);
            for j in 0..t.values.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                t.values[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Functional form: returns the updated parameters and state.
pub fn adam_step(state: &AdamState, params: &ParamSet, grads: &Grads) -> Result<(ParamSet, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::ParamTensor;

    fn single(w: f64) -> ParamSet {
        ParamSet::from_tensors(vec![ParamTensor::new("w", vec![2], vec![w, -w]).unwrap()])
    }

    #[test]
    fn zero_gradient_is_identity() {
        let p = single(0.7);
        let s = AdamState::new(&p, AdamConfig::default());
        let (p2, s2) = adam_step(&s, &p, &Grads(vec![vec![0.0, 0.0]])).unwrap();
        assert_eq!(p2, p);
        assert_eq!(s2.first_moment, vec![vec![0.0, 0.0]]);
        assert_eq!(s2.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let p = single(0.0);
        let s = AdamState::new(&p, AdamConfig::default());
        let (p2, _) = adam_step(&s, &p, &Grads(vec![vec![3.0, -0.2]])).unwrap();
        let lr = 1e-3;
        let d0 = p2.iter().next().unwrap().values[0];
        let d1 = p2.iter().next().unwrap().values[1];
        assert!(-d0 >= 0.99 * lr && -d0 <= lr);
        assert!(d1 >= 0.99 * lr && d1 <= lr);
    }

    #[test]
    fn minimizes_square() {
        let mut p = ParamSet::from_tensors(vec![ParamTensor::new("w", vec![1], vec![1.0]).unwrap()]);
        let mut s = AdamState::new(
            &p,
            AdamConfig {
                learning_rate: 0.05,
                ..AdamConfig::default()
            },
        );
        for _ in 0..500 {
            let w = p.iter().next().unwrap().values[0];
            s.step(&mut p, &Grads(vec![vec![2.0 * w]])).unwrap();
        }
        assert!(p.iter().next().unwrap().values[0].abs() < 0.01);
    }

    #[test]
    fn shape_mismatch() {
        let p = single(1.0);
        let s = AdamState::new(&p, AdamConfig::default());
        assert!(adam_step(&s, &p, &Grads(vec![vec![0.0]])).is_err());
    }
}
