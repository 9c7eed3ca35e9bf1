//! Recurrent mapping from human context and robot history to the robot's
//! motion latent. One code path serves the task-dynamics model and the raw
//! input variants.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{AgentKind, InteractionTrial, Normalizer, PairType, ROBOT_DIMS};
use crate::dynamics::DynamicsModel;
use crate::embedding::EmbeddingModel;
use crate::error::{shape_err, Error, Result};
use crate::nn::gaussian::GaussianParams;
use crate::nn::layers::gru_step;
use crate::nn::{Activation, GaussianHead, Grads, Graph, GruCell, Mat, ParamSet, Var};
use crate::train::{
    step_rows, train_recurrent, ChunkOutput, RecurrentObjective, RecurrentTrainConfig, StepSequence, TrainTrace,
};

/// What the robot GRU sees of the human besides its own previous frame.
#[derive(Clone, Debug, PartialEq)]
pub enum HumanContext {
    /// Means of the task-dynamics variable `d`.
    Dynamics(Box<DynamicsModel>),
    /// A zero vector of the given width in place of `d`.
    ZeroDynamics(usize),
    /// The normalized human frame.
    RawHuman(Normalizer),
    /// Nothing.
    RobotOnly,
}

impl HumanContext {
    pub fn model_kind(&self) -> &'static str {
        match self {
            Self::Dynamics(_) => "robot-hri",
            Self::ZeroDynamics(_) => "robot-hri-zero-d",
            Self::RawHuman(_) => "raw-hr",
            Self::RobotOnly => "raw-r",
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Self::Dynamics(m) => m.d_dim(),
            Self::ZeroDynamics(n) => *n,
            Self::RawHuman(n) => n.dims(),
            Self::RobotOnly => 0,
        }
    }

    /// Context row `t` for every frame of a raw human stream: for dynamics,
    /// row `t` is the mean of `p(d | h_t)`.
    pub fn sequence(&self, human: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(match self {
            Self::Dynamics(m) => {
                let d = m.extract_dynamics_means(&m.normalizer().apply(human))?;
                (0..d.rows()).map(|r| d.row(r).to_vec()).collect()
            }
            Self::ZeroDynamics(n) => vec![vec![0.0; *n]; human.len()],
            Self::RawHuman(n) => n.apply(human),
            Self::RobotOnly => vec![Vec::new(); human.len()],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotMapConfig {
    pub state_dim: usize,
    pub head_hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_trials: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub tbptt: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for RobotMapConfig {
    fn default() -> Self {
        Self {
            state_dim: 64,
            head_hidden: vec![64],
            activation: Activation::Tanh,
            epochs: 60,
            batch_trials: 8,
            learning_rate: 2e-3,
            lr_decay: 1.0,
            tbptt: 64,
            grad_clip: 10.0,
            seed: 0,
        }
    }
}

impl RobotMapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.batch_trials == 0 || self.tbptt == 0 {
            return Err(Error::InvalidArgument("state_dim, batch_trials and tbptt must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidArgument("invalid learning rate or decay".into()));
        }
        Ok(())
    }

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

#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    pub config: RobotMapConfig,
    pub params: ParamSet,
    pub gru: GruCell,
    pub z_head: GaussianHead,
    /// Frozen robot motion embedding.
    pub embedding: EmbeddingModel,
    /// Frozen human-side input source.
    pub context: HumanContext,
}

impl RobotModel {
    pub fn new(config: RobotMapConfig, embedding: EmbeddingModel, context: HumanContext) -> Result<Self> {
        config.validate()?;
        if embedding.agent_kind != AgentKind::Robot || embedding.dims != ROBOT_DIMS {
            return Err(Error::InvalidArgument("robot mapping needs the robot embedding".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let gru = GruCell::new(&mut params, "gru", ROBOT_DIMS + context.width(), config.state_dim, &mut rng);
        let z_head = GaussianHead::new(
            &mut params,
            "z_head",
            config.state_dim,
            &config.head_hidden,
            embedding.latent_dim(),
            config.activation,
            &mut rng,
        );
        Ok(Self {
            config,
            params,
            gru,
            z_head,
            embedding,
            context,
        })
    }

    pub fn input_dim(&self) -> usize {
        ROBOT_DIMS + self.context.width()
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    pub fn model_kind(&self) -> &'static str {
        self.context.model_kind()
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.embedding.normalizer
    }

    pub fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }

    /// `h' = f(h, [r_prev, c_prev])` and `p(z | h')`; `r_prev` is a normalized
    /// robot frame and `c_prev` a context row.
    pub fn robot_advance(&self, h: &[f64], r_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, GaussianParams)> {
        if r_prev.len() != ROBOT_DIMS || c_prev.len() != self.context.width() {
            return Err(shape_err("robot_advance", self.input_dim(), r_prev.len() + c_prev.len()));
        }
        let mut x = Vec::with_capacity(self.input_dim());
        x.extend_from_slice(r_prev);
        x.extend_from_slice(c_prev);
        let h2 = gru_step(&self.gru, &self.params, h, &x)?;
        let z = self.z_head.forward(&self.params, &h2)?;
        Ok((h2, z))
    }

    /// Row `t` is the mean of `p(z | h^r_t)` where `h^r_t` has consumed the
    /// recorded robot frames and human context of steps `0..t`.
    pub fn latent_means(&self, robot: &[Vec<f64>], human: &[Vec<f64>]) -> Result<Mat> {
        if robot.len() != human.len() {
            return Err(shape_err("robot/human stream length", robot.len(), human.len()));
        }
        let r = self.normalizer().apply(robot);
        let c = self.context.sequence(human)?;
        let mut out = Mat::zeros(robot.len(), self.embedding.latent_dim());
        let mut h = self.initial_state();
        for t in 0..robot.len() {
            out.row_mut(t).copy_from_slice(&self.z_head.forward(&self.params, &h)?.mean);
            if t + 1 < robot.len() {
                h = self.robot_advance(&h, &r[t], &c[t])?.0;
            }
        }
        Ok(out)
    }

    /// Normalized robot window decoded from the latent mean.
    pub fn predict_window(&self, z_mean: &[f64]) -> Result<Vec<f64>> {
        Ok(self.embedding.decode(z_mean)?.mean)
    }

    /// Training rows of one trial from raw streams: input `[r_{t-1}, c_{t-1}]`
    /// and posterior `q(z | r_{t:t+w})` for `t = 1..=T-w`. `None` when
    /// `T < w + 1`.
    pub fn step_sequence(&self, robot: &[Vec<f64>], human: &[Vec<f64>]) -> Result<Option<StepSequence>> {
        if robot.len() != human.len() {
            return Err(shape_err("robot/human stream length", robot.len(), human.len()));
        }
        let w = self.embedding.window_len();
        if robot.len() < w + 1 {
            return Ok(None);
        }
        let steps = robot.len() - w;
        let r = self.normalizer().apply(robot);
        let c = self.context.sequence(human)?;
        let mut data = Vec::with_capacity(steps * w * ROBOT_DIMS);
        for t in 1..=steps {
            for f in &r[t..t + w] {
                data.extend_from_slice(f);
            }
        }
        let q = self.embedding.encode_batch(&Mat::from_vec(steps, w * ROBOT_DIMS, data))?;
        let inputs = (0..steps).map(|t| [r[t].as_slice(), c[t].as_slice()].concat()).collect();
        Ok(Some(StepSequence {
            inputs,
            targets: (0..steps).map(|i| q.row(i)).collect(),
        }))
    }

    /// Sum over valid rows of `KL(p(z | h^r) || q(z | x^r))`.
    fn kl_chunk(&self, g: &mut Graph<'_>, batch: &[&StepSequence], range: Range<usize>, h0: &Mat) -> Result<ChunkOutput> {
        let mut h = g.input(h0.clone());
        let mut acc: Option<Var> = None;
        let mut steps = 0.0;
        for i in range {
            let rows = step_rows(batch, i, self.input_dim(), self.embedding.latent_dim());
            let valid: f64 = rows.mask.iter().sum();
            if valid == 0.0 {
                break;
            }
            let x = g.input(rows.inputs);
            h = self.gru.forward_graph(g, h, x)?;
            let (zm, zlv) = self.z_head.forward_graph(g, h)?;
            let tm = g.input(rows.target_mean);
            let tlv = g.input(rows.target_log_var);
            let kl = g.kl_diag(zm, zlv, tm, tlv)?;
            let kl = g.weighted_sum(kl, rows.mask)?;
            acc = Some(match acc {
                Some(a) => g.add(a, kl)?,
                None => kl,
            });
            steps += valid;
        }
        Ok(ChunkOutput {
            objective: acc,
            steps,
            states: vec![h],
        })
    }

    /// Full-unroll mean KL per row and its gradients.
    pub fn loss_and_grads(&self, batch: &[&StepSequence]) -> Result<(f64, Grads)> {
        let len = batch.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut g = Graph::new(&self.params);
        let c = self.kl_chunk(&mut g, batch, 0..len, &Mat::zeros(batch.len(), self.state_dim()))?;
        let obj = c.objective.ok_or_else(|| Error::InsufficientData("empty batch".into()))?;
        let loss = g.affine(obj, 1.0 / c.steps, 0.0);
        Ok((g.value(loss).get(0, 0), g.backward(loss)?))
    }

    /// Mean KL per row over full unrolls of each sequence.
    pub fn evaluate(&self, seqs: &[StepSequence]) -> Result<f64> {
        let (mut total, mut steps) = (0.0, 0.0);
        for s in seqs {
            let mut g = Graph::new(&self.params);
            let c = self.kl_chunk(&mut g, &[s], 0..s.len(), &Mat::zeros(1, self.state_dim()))?;
            total += c.objective.map_or(0.0, |v| g.value(v).get(0, 0));
            steps += c.steps;
        }
        Ok(total / steps.max(1.0))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(self.model_kind(), &self.config, Some(self.normalizer()))?;
        c.push_params("robot_map", &self.params);
        c.embed("robot_embedding", &self.embedding.to_checkpoint()?)?;
        match &self.context {
            HumanContext::Dynamics(m) => c.embed("dynamics", &m.to_checkpoint()?)?,
            HumanContext::ZeroDynamics(n) => {
                c.header.meta.insert("context_width".into(), (*n).into());
            }
            HumanContext::RawHuman(n) => {
                c.header.meta.insert("human_normalizer".into(), serde_json::to_value(n)?);
            }
            HumanContext::RobotOnly => {}
        }
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(&["robot-hri", "robot-hri-zero-d", "raw-hr", "raw-r"])?;
        let kind = c.header.model_kind.clone();
        let meta = |key: &str| {
            c.header
                .meta
                .get(key)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("{kind}: missing meta `{key}`")))
        };
        let context = match kind.as_str() {
            "robot-hri" => HumanContext::Dynamics(Box::new(DynamicsModel::from_checkpoint(&c.extract("dynamics")?)?)),
            "robot-hri-zero-d" => HumanContext::ZeroDynamics(
                meta("context_width")?
                    .as_u64()
                    .ok_or_else(|| Error::Checkpoint("context_width is not an integer".into()))? as usize,
            ),
            "raw-hr" => HumanContext::RawHuman(serde_json::from_value(meta("human_normalizer")?)?),
            _ => HumanContext::RobotOnly,
        };
        let embedding = EmbeddingModel::from_checkpoint(&c.extract("robot_embedding")?)?;
        let mut m = Self::new(c.config()?, embedding, context)?;
        c.load_params("robot_map", &mut m.params)?;
        Ok(m)
    }
}

impl RecurrentObjective for RobotModel {
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
        _rngs: &mut [ChaCha8Rng],
    ) -> Result<ChunkOutput> {
        let seqs: Vec<&StepSequence> = batch.iter().map(|b| &b[0]).collect();
        self.kl_chunk(g, &seqs, range, &h0[0])
    }
}

/// Training sequences of the human-robot trials; too-short trials are
/// skipped with a warning.
pub fn robot_sequences(model: &RobotModel, trials: &[InteractionTrial]) -> Result<Vec<StepSequence>> {
    let mut out = Vec::new();
    for t in trials.iter().filter(|t| t.pair_type == PairType::Hri) {
        match model.step_sequence(&t.a2.frames, &t.a1.frames)? {
            Some(s) => out.push(s),
            None => log::warn!("skipping trial {}: shorter than one window plus one frame", t.trial_id),
        }
    }
    Ok(out)
}

/// Fits the recurrent mapping by minimizing the summed KL between the
/// predicted robot latent and the robot embedding's posterior. Returns the
/// model, loss trace, and the number of training rows consumed per epoch.
pub fn train_robot_mapping(
    trials: &[InteractionTrial],
    embedding: &EmbeddingModel,
    context: HumanContext,
    config: &RobotMapConfig,
) -> Result<(RobotModel, TrainTrace, usize)> {
    let mut model = RobotModel::new(config.clone(), embedding.clone(), context)?;
    let seqs = robot_sequences(&model, trials)?;
    if seqs.is_empty() {
        return Err(Error::InsufficientData("no human-robot trial is long enough for robot mapping".into()));
    }
    let rows = seqs.iter().map(StepSequence::len).sum();
    let data: Vec<Vec<StepSequence>> = seqs.into_iter().map(|s| vec![s]).collect();
    let label = model.model_kind();
    let trace = train_recurrent(&mut model, &data, &config.trainer(), label)?;
    Ok((model, trace, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::WindowSpec;
    use crate::embedding::EmbeddingConfig;

    fn robot_embedding() -> EmbeddingModel {
        let cfg = EmbeddingConfig {
            latent_dim: 2,
            hidden: vec![6],
            window: WindowSpec { w: 3, stride: 1 },
            ..EmbeddingConfig::default()
        };
        EmbeddingModel::new(cfg, AgentKind::Robot, Normalizer::identity(AgentKind::Robot, ROBOT_DIMS)).unwrap()
    }

    fn small() -> RobotMapConfig {
        RobotMapConfig {
            state_dim: 5,
            head_hidden: vec![4],
            ..RobotMapConfig::default()
        }
    }

    #[test]
    fn variant_input_dims() {
        let emb = robot_embedding();
        let hr = RobotModel::new(small(), emb.clone(), HumanContext::RawHuman(Normalizer::identity(AgentKind::Human, 24))).unwrap();
        let r = RobotModel::new(small(), emb.clone(), HumanContext::RobotOnly).unwrap();
        let z = RobotModel::new(small(), emb, HumanContext::ZeroDynamics(4)).unwrap();
        assert_eq!((hr.input_dim(), r.input_dim(), z.input_dim()), (31, 7, 11));
        assert_eq!((hr.model_kind(), r.model_kind()), ("raw-hr", "raw-r"));
    }

    #[test]
    fn zero_weights_halve_state() {
        let mut m = RobotModel::new(small(), robot_embedding(), HumanContext::ZeroDynamics(2)).unwrap();
        m.params.iter_mut().for_each(|t| t.values.iter_mut().for_each(|v| *v = 0.0));
        let h = vec![0.4, -0.2, 1.0, 0.0, 0.6];
        let (h2, z) = m.robot_advance(&h, &[0.1; 7], &[0.0, 0.0]).unwrap();
        assert_eq!(h2, vec![0.2, -0.1, 0.5, 0.0, 0.3]);
        assert_eq!(z.dim(), 2);
        assert!(m.robot_advance(&h, &[0.1; 6], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn step_rows_pair_previous_frames_with_next_windows() {
        let m = RobotModel::new(small(), robot_embedding(), HumanContext::RawHuman(Normalizer::identity(AgentKind::Human, 2))).unwrap();
        let robot: Vec<Vec<f64>> = (0..8).map(|t| vec![0.01 * t as f64; 7]).collect();
        let human: Vec<Vec<f64>> = (0..8).map(|t| vec![t as f64, -(t as f64)]).collect();
        let s = m.step_sequence(&robot, &human).unwrap().unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.inputs[2], [robot[2].as_slice(), human[2].as_slice()].concat());
        assert!(m.step_sequence(&robot[..3], &human[..3]).unwrap().is_none());
        assert!(m.step_sequence(&robot, &human[..7]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_all_variants() {
        let emb = robot_embedding();
        for ctx in [
            HumanContext::RobotOnly,
            HumanContext::ZeroDynamics(3),
            HumanContext::RawHuman(Normalizer::identity(AgentKind::Human, 4)),
        ] {
            let m = RobotModel::new(small(), emb.clone(), ctx).unwrap();
            let bytes = m.to_checkpoint().unwrap().to_bytes().unwrap();
            assert_eq!(RobotModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap(), m);
        }
    }
}
