//! Shared task dynamics: a GRU over each partner's frames produces
//! `p(d_t | h_t)`, and `p(z_t | d_t)` predicts that partner's motion latent.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{AgentKind, AgentStream, InteractionTrial, Normalizer, PairType};
use crate::embedding::EmbeddingModel;
use crate::error::{shape_err, Error, Result};
use crate::nn::gaussian::{standard_normal_vec, GaussianParams};
use crate::nn::layers::gru_step;
use crate::nn::{Activation, GaussianHead, Grads, Graph, GruCell, Mat, ParamSet, Var};
use crate::train::{
    partner_rngs, step_rows, train_recurrent, ChunkOutput, RecurrentObjective, RecurrentTrainConfig, StepSequence, TrainTrace,
};

pub const MODEL_KIND: &str = "dynamics-hhi";

/// Argument order of the latent-matching KL term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(p(z | d) || q(z | x))`.
    #[default]
    ModelToPosterior,
    /// `KL(q(z | x) || p(z | d))`.
    PosteriorToModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub state_dim: usize,
    pub d_dim: usize,
    pub head_hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    /// Trials per minibatch.
    pub batch_trials: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// Truncated backpropagation length in steps.
    pub tbptt: usize,
    pub jsd_weight: f64,
    pub jsd_samples: usize,
    pub kl_direction: KlDirection,
    /// Global gradient-norm limit; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            state_dim: 128,
            d_dim: 16,
            head_hidden: vec![64],
            activation: Activation::Tanh,
            epochs: 40,
            batch_trials: 8,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            tbptt: 64,
            jsd_weight: 1.0,
            jsd_samples: 16,
            kl_direction: KlDirection::ModelToPosterior,
            grad_clip: 10.0,
            seed: 0,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.d_dim == 0 || self.batch_trials == 0 || self.tbptt == 0 || self.jsd_samples == 0 {
            return Err(Error::InvalidArgument(
                "state_dim, d_dim, batch_trials, tbptt and jsd_samples must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.jsd_weight < 0.0 {
            return Err(Error::InvalidArgument("invalid learning rate, decay or jsd weight".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    pub config: DynamicsConfig,
    pub params: ParamSet,
    pub gru: GruCell,
    pub d_head: GaussianHead,
    pub z_head: GaussianHead,
    /// Frozen human motion embedding.
    pub embedding: EmbeddingModel,
}

/// Loss tallies of a forward pass: sums over valid trial-steps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DynamicsLoss {
    pub kl: f64,
    pub jsd: f64,
    pub steps: f64,
}

impl DynamicsLoss {
    pub fn mean_kl(&self) -> f64 {
        self.kl / self.steps.max(1.0)
    }

    pub fn mean_jsd(&self) -> f64 {
        self.jsd / self.steps.max(1.0)
    }
}

/// Graph nodes of one truncated chunk.
pub struct ChunkGraph {
    pub kl: Option<Var>,
    pub jsd: Option<Var>,
    pub steps: f64,
    pub states: Vec<Var>,
}

fn accumulate(g: &mut Graph<'_>, acc: Option<Var>, term: Var) -> Result<Option<Var>> {
    Ok(Some(match acc {
        Some(a) => g.add(a, term)?,
        None => term,
    }))
}

impl DynamicsModel {
    pub fn new(config: DynamicsConfig, embedding: EmbeddingModel) -> Result<Self> {
        config.validate()?;
        if embedding.agent_kind != AgentKind::Human {
            return Err(Error::InvalidArgument("task dynamics need the human embedding".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let gru = GruCell::new(&mut params, "gru", embedding.dims, config.state_dim, &mut rng);
        let d_head = GaussianHead::new(&mut params, "d_head", config.state_dim, &config.head_hidden, config.d_dim, config.activation, &mut rng);
        let z_head = GaussianHead::new(
            &mut params,
            "z_head",
            config.d_dim,
            &config.head_hidden,
            embedding.latent_dim(),
            config.activation,
            &mut rng,
        );
        Ok(Self {
            config,
            params,
            gru,
            d_head,
            z_head,
            embedding,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    pub fn d_dim(&self) -> usize {
        self.config.d_dim
    }

    pub fn frame_dims(&self) -> usize {
        self.embedding.dims
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.embedding.normalizer
    }

    pub fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }

    /// `p(d | h)` for a recurrent state.
    pub fn dynamics_dist(&self, h: &[f64]) -> Result<GaussianParams> {
        self.d_head.forward(&self.params, h)
    }

    /// `h' = f(h, x_prev)` and `p(d | h')`.
    pub fn advance(&self, h: &[f64], x_prev: &[f64]) -> Result<(Vec<f64>, GaussianParams)> {
        let h2 = gru_step(&self.gru, &self.params, h, x_prev)?;
        let d = self.dynamics_dist(&h2)?;
        Ok((h2, d))
    }

    /// `p(z | d)` over the human embedding latent.
    pub fn latent_from_dynamics(&self, d: &[f64]) -> Result<GaussianParams> {
        if d.len() != self.d_dim() {
            return Err(shape_err("latent_from_dynamics", self.d_dim(), d.len()));
        }
        self.z_head.forward(&self.params, d)
    }

    /// Mean window decoded from the mean latent of `p(z | d)`, normalized,
    /// `w * dims` values.
    pub fn predict_window(&self, d: &[f64]) -> Result<Vec<f64>> {
        let z = self.latent_from_dynamics(d)?;
        Ok(self.embedding.decode(&z.mean)?.mean)
    }

    /// Row `t` is the mean of `p(d | h_t)` where `h_t` has consumed frames
    /// `0..t`; `h_0 = 0`.
    pub fn extract_dynamics_means(&self, frames: &[Vec<f64>]) -> Result<Mat> {
        let mut out = Mat::zeros(frames.len(), self.d_dim());
        let mut h = self.initial_state();
        for (t, x) in frames.iter().enumerate() {
            out.row_mut(t).copy_from_slice(&self.dynamics_dist(&h)?.mean);
            if t + 1 < frames.len() {
                h = gru_step(&self.gru, &self.params, &h, x)?;
            }
        }
        Ok(out)
    }

    /// Training rows of one normalized stream: input `x_{t-1}` and posterior
    /// `q(z | x_{t:t+w})` for `t = 1..=T-w`. `None` when `T < w + 1`.
    pub fn step_sequence(&self, frames: &[Vec<f64>]) -> Result<Option<StepSequence>> {
        let w = self.embedding.window_len();
        if frames.len() < w + 1 {
            return Ok(None);
        }
        let steps = frames.len() - w;
        let mut data = Vec::with_capacity(steps * w * self.frame_dims());
        for t in 1..=steps {
            for f in &frames[t..t + w] {
                data.extend_from_slice(f);
            }
        }
        let q = self.embedding.encode_batch(&Mat::from_vec(steps, w * self.frame_dims(), data))?;
        Ok(Some(StepSequence {
            inputs: frames[..steps].to_vec(),
            targets: (0..steps).map(|r| q.row(r)).collect(),
        }))
    }

    /// One sequence per partner stream (both partners of a human-human
    /// trial, or one stream), or `None` when the trial is too short.
    pub fn prepare_group(&self, streams: &[&AgentStream]) -> Result<Option<Vec<StepSequence>>> {
        let mut out = Vec::with_capacity(streams.len());
        for s in streams {
            if s.kind != AgentKind::Human || s.dims != self.frame_dims() {
                return Err(Error::InvalidArgument("dynamics training needs human streams of the embedding's dims".into()));
            }
            match self.step_sequence(&self.normalizer().apply(&s.frames))? {
                Some(seq) => out.push(seq),
                None => return Ok(None),
            }
        }
        Ok(Some(out))
    }

    /// Records steps `range` of a batch of partner groups on `g`, starting from
    /// per-partner states `h0` (each `B x state_dim`). Partner `p` draws its
    /// `d` sample and its JSD samples from `rngs[p]`.
    pub fn chunk_graph(
        &self,
        g: &mut Graph<'_>,
        batch: &[&[StepSequence]],
        range: Range<usize>,
        h0: &[Mat],
        rngs: &mut [ChaCha8Rng],
    ) -> Result<ChunkGraph> {
        let partners = batch.first().map_or(0, |b| b.len());
        if partners == 0 || batch.iter().any(|b| b.len() != partners) || h0.len() != partners || rngs.len() != partners {
            return Err(Error::InvalidArgument("batch groups must all have the same partner count".into()));
        }
        let b = batch.len();
        let (dd, s) = (self.d_dim(), self.config.jsd_samples);
        let mut states: Vec<Var> = h0.iter().map(|h| g.input(h.clone())).collect();
        let (mut kl_acc, mut jsd_acc) = (None, None);
        let mut steps = 0.0;
        for i in range {
            let mut dists = Vec::with_capacity(partners);
            let mut mask = Vec::new();
            for p in 0..partners {
                let seqs: Vec<&StepSequence> = batch.iter().map(|grp| &grp[p]).collect();
                let rows = step_rows(&seqs, i, self.frame_dims(), self.embedding.latent_dim());
                let x = g.input(rows.inputs);
                states[p] = self.gru.forward_graph(g, states[p], x)?;
                let (dm, dlv) = self.d_head.forward_graph(g, states[p])?;
                let noise = Mat::from_vec(b, dd, standard_normal_vec(&mut rngs[p], b * dd));
                let d = g.reparam(dm, dlv, noise)?;
                let (zm, zlv) = self.z_head.forward_graph(g, d)?;
                let tm = g.input(rows.target_mean);
                let tlv = g.input(rows.target_log_var);
                let kl = match self.config.kl_direction {
                    KlDirection::ModelToPosterior => g.kl_diag(zm, zlv, tm, tlv)?,
                    KlDirection::PosteriorToModel => g.kl_diag(tm, tlv, zm, zlv)?,
                };
                let kl = g.weighted_sum(kl, rows.mask.clone())?;
                kl_acc = accumulate(g, kl_acc, kl)?;
                dists.push((dm, dlv));
                mask = rows.mask;
            }
            if partners == 2 {
                let np = Mat::from_vec(b, s * dd, standard_normal_vec(&mut rngs[0], b * s * dd));
                let nq = Mat::from_vec(b, s * dd, standard_normal_vec(&mut rngs[1], b * s * dd));
                let jsd = g.jsd(dists[0], dists[1], np, nq, s)?;
                let jsd = g.weighted_sum(jsd, mask.clone())?;
                jsd_acc = accumulate(g, jsd_acc, jsd)?;
            }
            let valid: f64 = mask.iter().sum();
            if valid == 0.0 {
                break;
            }
            steps += valid;
        }
        Ok(ChunkGraph {
            kl: kl_acc,
            jsd: jsd_acc,
            steps,
            states,
        })
    }

    /// Total objective node `KL + jsd_weight * JSD` of a chunk.
    pub fn objective(&self, g: &mut Graph<'_>, chunk: &ChunkGraph) -> Result<Option<Var>> {
        let jsd = chunk.jsd.map(|j| g.affine(j, self.config.jsd_weight, 0.0));
        match (chunk.kl, jsd) {
            (Some(k), Some(j)) => Ok(Some(g.add(k, j)?)),
            (k, j) => Ok(k.or(j)),
        }
    }

    /// Full-unroll loss and gradients of a batch (no truncation), partner `p`
    /// drawing noise from `seeds[p]`. The objective is the mean over
    /// trial-steps.
    pub fn loss_and_grads(&self, batch: &[&[StepSequence]], seeds: &[u64]) -> Result<(f64, Grads)> {
        let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect();
        let len = batch.iter().map(|b| b[0].len()).max().unwrap_or(0);
        let h0 = vec![Mat::zeros(batch.len(), self.state_dim()); batch.first().map_or(0, |b| b.len())];
        let mut g = Graph::new(&self.params);
        let chunk = self.chunk_graph(&mut g, batch, 0..len, &h0, &mut rngs)?;
        let total = self.objective(&mut g, &chunk)?.ok_or_else(|| Error::InsufficientData("empty batch".into()))?;
        let loss = g.affine(total, 1.0 / chunk.steps.max(1.0), 0.0);
        Ok((g.value(loss).get(0, 0), g.backward(loss)?))
    }

    /// Forward-only loss tallies over full unrolls.
    pub fn evaluate(&self, groups: &[Vec<StepSequence>], seed: u64) -> Result<DynamicsLoss> {
        let mut rngs = partner_rngs(&mut ChaCha8Rng::seed_from_u64(seed), groups.first().map_or(0, |g| g.len()));
        let mut out = DynamicsLoss::default();
        for grp in groups {
            let batch = [grp.as_slice()];
            let h0 = vec![Mat::zeros(1, self.state_dim()); grp.len()];
            let mut g = Graph::new(&self.params);
            let chunk = self.chunk_graph(&mut g, &batch, 0..grp[0].len(), &h0, &mut rngs)?;
            out.kl += chunk.kl.map_or(0.0, |v| g.value(v).get(0, 0));
            out.jsd += chunk.jsd.map_or(0.0, |v| g.value(v).get(0, 0));
            out.steps += chunk.steps;
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(MODEL_KIND, &self.config, Some(self.normalizer()))?;
        c.push_params("dynamics", &self.params);
        c.embed("embedding", &self.embedding.to_checkpoint()?)?;
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(&[MODEL_KIND])?;
        let embedding = EmbeddingModel::from_checkpoint(&c.extract("embedding")?)?;
        let mut m = Self::new(c.config()?, embedding)?;
        c.load_params("dynamics", &mut m.params)?;
        Ok(m)
    }
}

/// Partner groups for training: both humans of every human-human trial.
pub fn hhi_groups<'a>(trials: &'a [InteractionTrial]) -> Vec<Vec<&'a AgentStream>> {
    trials
        .iter()
        .filter(|t| t.pair_type == PairType::Hhi)
        .map(|t| vec![&t.a1, &t.a2])
        .collect()
}

/// Single-partner groups: the human side of every trial.
pub fn human_side_groups<'a>(trials: &'a [InteractionTrial]) -> Vec<Vec<&'a AgentStream>> {
    trials.iter().map(|t| vec![&t.a1]).collect()
}

impl RecurrentObjective for DynamicsModel {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    fn chunk(
        &self,
        g: &mut Graph<'_>,
        batch: &[&[StepSequence]],
        range: Range<usize>,
        h0: &[Mat],
        rngs: &mut [ChaCha8Rng],
    ) -> Result<ChunkOutput> {
        let c = self.chunk_graph(g, batch, range, h0, rngs)?;
        Ok(ChunkOutput {
            objective: self.objective(g, &c)?,
            steps: c.steps,
            states: c.states,
        })
    }
}

impl DynamicsConfig {
    pub fn trainer(&self) -> RecurrentTrainConfig {
        RecurrentTrainConfig {
            epochs: self.epochs,
            batch_trials: self.batch_trials,
            learning_rate: self.learning_rate,
            lr_decay: self.lr_decay,
            tbptt: self.tbptt,
            grad_clip: self.grad_clip,
            seed: self.seed,
        }
    }
}

/// Minimizes the latent-matching KL of every partner plus the weighted JSD
/// between partners' `p(d | h)`, by Adam over truncated unrolls. Groups may
/// hold one or two streams (all groups the same); too-short groups are
/// skipped with a warning.
pub fn train_dynamics(
    groups: &[Vec<&AgentStream>],
    embedding: &EmbeddingModel,
    config: &DynamicsConfig,
) -> Result<(DynamicsModel, TrainTrace)> {
    let mut model = DynamicsModel::new(config.clone(), embedding.clone())?;
    let mut data = Vec::new();
    for (i, grp) in groups.iter().enumerate() {
        match model.prepare_group(grp)? {
            Some(seqs) => data.push(seqs),
            None => log::warn!("skipping training group {i}: shorter than one window plus one frame"),
        }
    }
    if data.is_empty() {
        return Err(Error::InsufficientData("no trial is long enough for dynamics training".into()));
    }
    let trace = train_recurrent(&mut model, &data, &config.trainer(), "dynamics")?;
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::WindowSpec;
    use crate::embedding::EmbeddingConfig;

    fn embedding(dims: usize, w: usize, latent: usize) -> EmbeddingModel {
        let cfg = EmbeddingConfig {
            latent_dim: latent,
            hidden: vec![6],
            window: WindowSpec { w, stride: 1 },
            ..EmbeddingConfig::default()
        };
        EmbeddingModel::new(cfg, AgentKind::Human, Normalizer::identity(AgentKind::Human, dims)).unwrap()
    }

    fn model() -> DynamicsModel {
        let cfg = DynamicsConfig {
            state_dim: 8,
            d_dim: 4,
            head_hidden: vec![5],
            jsd_samples: 4,
            ..DynamicsConfig::default()
        };
        DynamicsModel::new(cfg, embedding(3, 4, 2)).unwrap()
    }

    #[test]
    fn zero_weights_halve_state() {
        let mut m = model();
        m.params.iter_mut().for_each(|t| t.values.iter_mut().for_each(|v| *v = 0.0));
        let out = m.d_head.mlp.layers.last().copied().unwrap();
        m.params.get_mut(out.bias).values = vec![0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 0.0, 0.0];
        let h = vec![0.8, -0.4, 0.2, 1.0, 0.0, -1.0, 0.6, 0.3];
        let (h2, d) = m.advance(&h, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(h2, h.iter().map(|v| 0.5 * v).collect::<Vec<_>>());
        assert_eq!(d.mean, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(m.latent_from_dynamics(&d.mean).unwrap().dim(), 2);
    }

    #[test]
    fn extraction_rows_and_determinism() {
        let m = model();
        let frames: Vec<Vec<f64>> = (0..12).map(|t| vec![(t as f64 * 0.3).sin(), 0.1 * t as f64, -0.5]).collect();
        let d = m.extract_dynamics_means(&frames).unwrap();
        assert_eq!(d.rows(), 12);
        assert_eq!(d, m.extract_dynamics_means(&frames).unwrap());
        // Step-by-step replay of the recurrence.
        let mut h = m.initial_state();
        for (t, x) in frames.iter().enumerate() {
            assert_eq!(d.row(t), m.dynamics_dist(&h).unwrap().mean.as_slice());
            h = m.advance(&h, x).unwrap().0;
        }
    }

    #[test]
    fn step_sequence_counts() {
        let m = model();
        let frames: Vec<Vec<f64>> = (0..10).map(|t| vec![t as f64; 3]).collect();
        let seq = m.step_sequence(&frames).unwrap().unwrap();
        assert_eq!(seq.len(), 6);
        assert_eq!(seq.inputs[0], frames[0]);
        let window: Vec<f64> = frames[1..5].concat();
        let q = m.embedding.encode(&window).unwrap();
        for (a, b) in seq.targets[0].mean.iter().chain(&seq.targets[0].log_var).zip(q.mean.iter().chain(&q.log_var)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(m.step_sequence(&frames[..4]).unwrap().is_none());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model();
        let back = DynamicsModel::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().unwrap().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
