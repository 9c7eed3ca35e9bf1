//! Shared training bookkeeping.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::gaussian::GaussianParams;
use crate::nn::{AdamConfig, AdamState, Grads, Graph, Mat, ParamSet, Var};

/// Rescales `grads` in place so its global norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) {
    let n = grads.norm();
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        grads.0.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

/// Learning rate `lr * decay^epoch`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSchedule {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
}

impl EpochSchedule {
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }
}

/// Per-epoch mean training loss (lower is better).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epoch_loss: Vec<f64>,
}

impl TrainTrace {
    /// Exponential moving average of the loss with weight `alpha` on the
    /// newest epoch.
    pub fn smoothed(&self, alpha: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.epoch_loss.len());
        for (i, &v) in self.epoch_loss.iter().enumerate() {
            out.push(if i == 0 { v } else { alpha * v + (1.0 - alpha) * out[i - 1] });
        }
        out
    }

    /// Fraction of epoch-to-epoch steps where the smoothed loss decreased.
    pub fn improving_fraction(&self, alpha: f64) -> f64 {
        let s = self.smoothed(alpha);
        if s.len() < 2 {
            return 1.0;
        }
        let better = s.windows(2).filter(|p| p[1] < p[0]).count();
        better as f64 / (s.len() - 1) as f64
    }
}

/// One agent's recurrent training sequence: at step `i` the network consumes
/// `inputs[i]` and its prediction is scored against `targets[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSequence {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<GaussianParams>,
}

impl StepSequence {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Rows of one time step across a batch of sequences; sequences that already
/// ended contribute zero rows with mask 0.
pub struct StepRows {
    pub inputs: Mat,
    pub target_mean: Mat,
    pub target_log_var: Mat,
    pub mask: Vec<f64>,
}

pub fn step_rows(seqs: &[&StepSequence], i: usize, in_dim: usize, target_dim: usize) -> StepRows {
    let b = seqs.len();
    let mut inputs = Mat::zeros(b, in_dim);
    let mut target_mean = Mat::zeros(b, target_dim);
    let mut target_log_var = Mat::zeros(b, target_dim);
    let mut mask = vec![0.0; b];
    for (r, s) in seqs.iter().enumerate() {
        if i < s.len() {
            inputs.row_mut(r).copy_from_slice(&s.inputs[i]);
            target_mean.row_mut(r).copy_from_slice(&s.targets[i].mean);
            target_log_var.row_mut(r).copy_from_slice(&s.targets[i].log_var);
            mask[r] = 1.0;
        }
    }
    StepRows {
        inputs,
        target_mean,
        target_log_var,
        mask,
    }
}

/// Optimizer settings of a truncated-unroll recurrent trainer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecurrentTrainConfig {
    pub epochs: usize,
    pub batch_trials: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub tbptt: usize,
    /// 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

/// Summed objective of a chunk, its number of scored trial-steps, and the
/// final recurrent state of each partner.
pub struct ChunkOutput {
    pub objective: Option<Var>,
    pub steps: f64,
    pub states: Vec<Var>,
}

/// A recurrent model trained on batches of [`StepSequence`] groups, one
/// sequence per partner.
pub trait RecurrentObjective {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn state_dim(&self) -> usize;
    /// Records steps `range` of `batch` from states `h0` (one `B x state` per
    /// partner); partner `p` draws any noise from `rngs[p]`.
    fn chunk(
        &self,
        g: &mut Graph<'_>,
        batch: &[&[StepSequence]],
        range: Range<usize>,
        h0: &[Mat],
        rngs: &mut [ChaCha8Rng],
    ) -> Result<ChunkOutput>;
}

/// Independent noise streams for `partners`, seeded from `rng`.
pub fn partner_rngs(rng: &mut ChaCha8Rng, partners: usize) -> Vec<ChaCha8Rng> {
    (0..partners).map(|_| ChaCha8Rng::seed_from_u64(rng.gen())).collect()
}

/// Adam over shuffled minibatches of groups, one step per truncated chunk of
/// `tbptt` steps; states carry over between chunks without gradient. The
/// trace records the per-step mean objective of each epoch.
pub fn train_recurrent<M: RecurrentObjective>(
    model: &mut M,
    data: &[Vec<StepSequence>],
    cfg: &RecurrentTrainConfig,
    label: &str,
) -> Result<TrainTrace> {
    let partners = data.first().map_or(0, Vec::len);
    if partners == 0 {
        return Err(Error::InsufficientData(format!("no {label} training sequences")));
    }
    if data.iter().any(|d| d.len() != partners) {
        return Err(Error::InvalidArgument(format!("mixed partner counts in {label} training groups")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut rngs = partner_rngs(&mut rng, partners);
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let schedule = EpochSchedule {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        lr_decay: cfg.lr_decay,
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = TrainTrace::default();
    for epoch in 0..cfg.epochs {
        adam.set_learning_rate(schedule.learning_rate(epoch));
        order.shuffle(&mut rng);
        let (mut total, mut steps) = (0.0, 0.0);
        for idx in order.chunks(cfg.batch_trials.max(1)) {
            let batch: Vec<&[StepSequence]> = idx.iter().map(|&i| data[i].as_slice()).collect();
            let len = batch.iter().map(|b| b[0].len()).max().unwrap_or(0);
            let mut h = vec![Mat::zeros(batch.len(), model.state_dim()); partners];
            let mut start = 0;
            while start < len {
                let end = (start + cfg.tbptt.max(1)).min(len);
                let (mut grads, value, n, next) = {
                    let mut g = Graph::new(model.params());
                    let chunk = model.chunk(&mut g, &batch, start..end, &h, &mut rngs)?;
                    let Some(obj) = chunk.objective else { break };
                    let value = g.value(obj).get(0, 0);
                    if !value.is_finite() {
                        return Err(Error::NonFinite(format!("{label} loss at epoch {epoch}, steps {start}..{end}")));
                    }
                    let loss = g.affine(obj, 1.0 / chunk.steps.max(1.0), 0.0);
                    let grads = g.backward(loss)?;
                    let next: Vec<Mat> = chunk.states.iter().map(|v| g.value(*v).clone()).collect();
                    (grads, value, chunk.steps, next)
                };
                if cfg.grad_clip > 0.0 {
                    clip_grad_norm(&mut grads, cfg.grad_clip);
                }
                adam.step(model.params_mut(), &grads)?;
                total += value;
                steps += n;
                h = next;
                start = end;
            }
        }
        let mean = total / steps.max(1.0);
        log::debug!("{label} epoch {epoch}: loss {mean:.5}");
        trace.epoch_loss.push(mean);
    }
    Ok(trace)
}
