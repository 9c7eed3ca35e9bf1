//! Closed-loop rollouts beyond the observed window and the incremental
//! online predictor. Both run on the same stepper, so an online session
//! reproduces a batch rollout exactly whenever its windows refresh.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ROBOT_DIMS;
use crate::dynamics::DynamicsModel;
use crate::error::{shape_err, Error, Result};
use crate::nn::gaussian::{reparameterize, standard_normal_vec, GaussianParams};
use crate::nn::layers::gru_step;
use crate::robot_map::{HumanContext, RobotModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutOptions {
    /// Steps between window re-decodes; at most the window length.
    pub refresh_every: usize,
    /// Draw `d` and the robot latent instead of using means.
    pub sample_seed: Option<u64>,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            refresh_every: 4,
            sample_seed: None,
        }
    }
}

impl RolloutOptions {
    pub fn every_step() -> Self {
        Self {
            refresh_every: 1,
            sample_seed: None,
        }
    }
}

fn pick(g: &GaussianParams, rng: &mut Option<ChaCha8Rng>) -> Result<Vec<f64>> {
    match rng {
        Some(r) => reparameterize(g, &standard_normal_vec(r, g.dim())),
        None => Ok(g.mean.clone()),
    }
}

fn split_window(flat: &[f64], dims: usize) -> Vec<Vec<f64>> {
    flat.chunks(dims).map(<[f64]>::to_vec).collect()
}

fn clamp_angles(frame: &mut [f64]) {
    frame.iter_mut().for_each(|a| *a = a.clamp(-PI, PI));
}

/// Recurrent human-side state of the task-dynamics model.
#[derive(Clone, Debug, PartialEq)]
struct HumanTrack {
    h: Vec<f64>,
    /// `d` for the current state: the mean (or a draw) of `p(d | h)`.
    d: Vec<f64>,
}

impl HumanTrack {
    fn new(m: &DynamicsModel, rng: &mut Option<ChaCha8Rng>) -> Result<Self> {
        let h = m.initial_state();
        let d = pick(&m.dynamics_dist(&h)?, rng)?;
        Ok(Self { h, d })
    }

    /// Consumes a normalized frame.
    fn step(&mut self, m: &DynamicsModel, x: &[f64], rng: &mut Option<ChaCha8Rng>) -> Result<()> {
        self.h = gru_step(&m.gru, &m.params, &self.h, x)?;
        self.d = pick(&m.dynamics_dist(&self.h)?, rng)?;
        Ok(())
    }

    /// Raw human frames predicted from the current state onward.
    fn window(&self, m: &DynamicsModel) -> Result<Vec<Vec<f64>>> {
        let flat = m.predict_window(&self.d)?;
        Ok(m.normalizer().invert(&split_window(&flat, m.frame_dims())))
    }
}

/// Human-only rollout: unrolls the task dynamics over `prefix` (raw frames),
/// then emits `horizon` predicted frames, feeding each predicted frame back
/// as the next input and re-decoding every `refresh_every` steps.
pub fn rollout_human(model: &DynamicsModel, prefix: &[Vec<f64>], horizon: usize, opts: RolloutOptions) -> Result<Vec<Vec<f64>>> {
    check_rollout_args(prefix.len(), horizon, opts, model.embedding.window_len())?;
    let mut rng = opts.sample_seed.map(ChaCha8Rng::seed_from_u64);
    let mut track = HumanTrack::new(model, &mut rng)?;
    for x in prefix {
        check_frame(x, model.frame_dims())?;
        track.step(model, &model.normalizer().apply_frame(x), &mut rng)?;
    }
    let mut out = Vec::with_capacity(horizon);
    let mut window = Vec::new();
    for k in 0..horizon {
        let cursor = k % opts.refresh_every;
        if cursor == 0 {
            window = track.window(model)?;
        }
        let frame = window[cursor].clone();
        if k + 1 < horizon {
            track.step(model, &model.normalizer().apply_frame(&frame), &mut rng)?;
        }
        out.push(frame);
    }
    Ok(out)
}

fn check_rollout_args(prefix: usize, horizon: usize, opts: RolloutOptions, w: usize) -> Result<()> {
    if prefix == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("rollout needs a non-empty prefix and horizon".into()));
    }
    if opts.refresh_every == 0 || opts.refresh_every > w {
        return Err(Error::InvalidArgument(format!("refresh_every must be in 1..={w}")));
    }
    Ok(())
}

fn check_frame(x: &[f64], dims: usize) -> Result<()> {
    if x.len() != dims {
        return Err(shape_err("frame", dims, x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input frame".into()));
    }
    Ok(())
}

/// State of one robot prediction session.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutState {
    human: Option<HumanTrack>,
    robot_h: Vec<f64>,
    /// Latent for the current robot state.
    robot_z: Option<Vec<f64>>,
    /// Raw robot frame consumed by the next robot step.
    robot_frame: Vec<f64>,
    /// Normalized last observed human frame.
    last_human: Option<Vec<f64>>,
    robot_window: Vec<Vec<f64>>,
    human_window: Vec<Vec<f64>>,
    cursor: usize,
    steps: usize,
    opts: RolloutOptions,
    rng: Option<ChaCha8Rng>,
}

/// Result of one online step.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineOutput {
    /// Robot frame for the next time step, clamped to `[-pi, pi]`.
    pub command: Vec<f64>,
    /// Predicted robot frames starting with `command`.
    pub robot_window: Vec<Vec<f64>>,
    /// Predicted human frames aligned with `robot_window` (empty without a
    /// task-dynamics model).
    pub human_window: Vec<Vec<f64>>,
}

impl RolloutState {
    /// Fresh session whose robot starts at `initial_robot` (raw angles).
    pub fn new(model: &RobotModel, initial_robot: &[f64], opts: RolloutOptions) -> Result<Self> {
        check_frame(initial_robot, ROBOT_DIMS)?;
        check_rollout_args(1, 1, opts, model.embedding.window_len())?;
        let mut rng = opts.sample_seed.map(ChaCha8Rng::seed_from_u64);
        let human = match &model.context {
            HumanContext::Dynamics(d) => Some(HumanTrack::new(d, &mut rng)?),
            _ => None,
        };
        Ok(Self {
            human,
            robot_h: model.initial_state(),
            robot_z: None,
            robot_frame: initial_robot.to_vec(),
            last_human: None,
            robot_window: Vec::new(),
            human_window: Vec::new(),
            cursor: 0,
            steps: 0,
            opts,
            rng,
        })
    }

    /// Number of observed human frames consumed.
    pub fn steps(&self) -> usize {
        self.steps
    }

    fn human_dims(model: &RobotModel) -> Option<usize> {
        match &model.context {
            HumanContext::Dynamics(d) => Some(d.frame_dims()),
            HumanContext::RawHuman(n) => Some(n.dims()),
            _ => None,
        }
    }

    fn context(&self, model: &RobotModel) -> Vec<f64> {
        match &model.context {
            HumanContext::Dynamics(_) => self.human.as_ref().map(|h| h.d.clone()).unwrap_or_default(),
            HumanContext::ZeroDynamics(n) => vec![0.0; *n],
            HumanContext::RawHuman(n) => self.last_human.clone().unwrap_or_else(|| vec![0.0; n.dims()]),
            HumanContext::RobotOnly => Vec::new(),
        }
    }

    /// Robot step on `robot_frame` and the current context, then the human
    /// step on `human` (normalized) when given.
    fn advance(&mut self, model: &RobotModel, human: Option<&[f64]>) -> Result<()> {
        let r = model.normalizer().apply_frame(&self.robot_frame);
        let c = self.context(model);
        let (h, z) = model.robot_advance(&self.robot_h, &r, &c)?;
        self.robot_h = h;
        self.robot_z = Some(pick(&z, &mut self.rng)?);
        if let (Some(x), Some(track), HumanContext::Dynamics(d)) = (human, self.human.as_mut(), &model.context) {
            track.step(d, x, &mut self.rng)?;
        }
        Ok(())
    }

    fn observe(&mut self, model: &RobotModel, human: &[f64]) -> Result<()> {
        let x = match &model.context {
            HumanContext::Dynamics(d) => Some(d.normalizer().apply_frame(human)),
            HumanContext::RawHuman(n) => Some(n.apply_frame(human)),
            _ => None,
        };
        if matches!(model.context, HumanContext::RawHuman(_)) {
            self.last_human = x.clone();
        }
        self.advance(model, x.as_deref())?;
        self.steps += 1;
        Ok(())
    }

    fn refresh(&mut self, model: &RobotModel) -> Result<()> {
        let z = self
            .robot_z
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no robot state to decode yet".into()))?;
        let flat = model.predict_window(z)?;
        self.robot_window = model.normalizer().invert(&split_window(&flat, ROBOT_DIMS));
        self.robot_window.iter_mut().for_each(|f| clamp_angles(f));
        self.human_window = match (&self.human, &model.context) {
            (Some(track), HumanContext::Dynamics(d)) => track.window(d)?,
            _ => Vec::new(),
        };
        self.cursor = 0;
        Ok(())
    }

    /// Emits `robot_window[cursor]` and makes it the next robot input.
    fn emit(&mut self) -> Vec<f64> {
        let f = self.robot_window[self.cursor].clone();
        self.cursor += 1;
        self.robot_frame = f.clone();
        f
    }

    /// Consumes one observed human frame (raw) and returns the robot frame for
    /// the next step. Windows refresh every `refresh_every` observed frames.
    /// A frame of the wrong size or with non-finite values is rejected and
    /// leaves the state untouched.
    pub fn online_step(&mut self, model: &RobotModel, human: &[f64]) -> Result<OnlineOutput> {
        if let Some(dims) = Self::human_dims(model) {
            check_frame(human, dims)?;
        } else if human.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input frame".into()));
        }
        let mut next = self.clone();
        next.observe(model, human)?;
        if next.steps % next.opts.refresh_every == 0 || next.cursor >= next.robot_window.len() {
            next.refresh(model)?;
        }
        let start = next.cursor;
        let command = next.emit();
        let out = OnlineOutput {
            command,
            robot_window: next.robot_window[start..].to_vec(),
            human_window: next.human_window.get(start..).map(<[_]>::to_vec).unwrap_or_default(),
        };
        *self = next;
        Ok(out)
    }
}

/// Robot rollout: unrolls both recurrent models over the time-aligned raw
/// prefixes, then emits `horizon` robot frames. Predicted robot frames are
/// fed back as robot inputs; the human side continues on its own predicted
/// frames (task dynamics) or holds the last observed pose (raw human input).
pub fn rollout_robot(
    model: &RobotModel,
    human_prefix: &[Vec<f64>],
    robot_prefix: &[Vec<f64>],
    horizon: usize,
    opts: RolloutOptions,
) -> Result<Vec<Vec<f64>>> {
    if human_prefix.len() != robot_prefix.len() {
        return Err(shape_err("rollout prefixes", human_prefix.len(), robot_prefix.len()));
    }
    check_rollout_args(robot_prefix.len(), horizon, opts, model.embedding.window_len())?;
    let mut state = RolloutState::new(model, &robot_prefix[0], opts)?;
    for (x, r) in human_prefix.iter().zip(robot_prefix) {
        if let Some(dims) = RolloutState::human_dims(model) {
            check_frame(x, dims)?;
        }
        check_frame(r, ROBOT_DIMS)?;
        state.robot_frame = r.clone();
        state.observe(model, x)?;
    }
    let mut out = Vec::with_capacity(horizon);
    for k in 0..horizon {
        if k % opts.refresh_every == 0 {
            state.refresh(model)?;
        }
        let human_next = state.human_window.get(state.cursor).cloned();
        let frame = state.emit();
        if k + 1 < horizon {
            let x = match (&model.context, human_next) {
                (HumanContext::Dynamics(d), Some(h)) => Some(d.normalizer().apply_frame(&h)),
                _ => None,
            };
            state.advance(model, x.as_deref())?;
        }
        out.push(frame);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AgentKind, Normalizer, WindowSpec};
    use crate::dynamics::DynamicsConfig;
    use crate::embedding::{EmbeddingConfig, EmbeddingModel};
    use crate::robot_map::RobotMapConfig;

    fn emb(kind: AgentKind, dims: usize, w: usize) -> EmbeddingModel {
        let cfg = EmbeddingConfig {
            latent_dim: 3,
            hidden: vec![8],
            window: WindowSpec { w, stride: 1 },
            seed: 3,
            ..EmbeddingConfig::default()
        };
        EmbeddingModel::new(cfg, kind, Normalizer::identity(kind, dims)).unwrap()
    }

    fn models(w: usize) -> (DynamicsModel, RobotModel) {
        let dcfg = DynamicsConfig {
            state_dim: 6,
            d_dim: 3,
            head_hidden: vec![5],
            seed: 1,
            ..DynamicsConfig::default()
        };
        let dynamics = DynamicsModel::new(dcfg, emb(AgentKind::Human, 2, w)).unwrap();
        let rcfg = RobotMapConfig {
            state_dim: 5,
            head_hidden: vec![4],
            seed: 2,
            ..RobotMapConfig::default()
        };
        let robot = RobotModel::new(rcfg, emb(AgentKind::Robot, ROBOT_DIMS, w), HumanContext::Dynamics(Box::new(dynamics.clone()))).unwrap();
        (dynamics, robot)
    }

    fn human(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|t| vec![(0.2 * t as f64).sin(), 0.1 * (0.2 * t as f64).cos()]).collect()
    }

    #[test]
    fn horizon_one_is_first_window_frame() {
        let (d, _) = models(6);
        let prefix = human(5);
        let one = rollout_human(&d, &prefix, 1, RolloutOptions::default()).unwrap();
        let mut track = HumanTrack::new(&d, &mut None).unwrap();
        for x in &prefix {
            track.step(&d, x, &mut None).unwrap();
        }
        assert_eq!(one[0], track.window(&d).unwrap()[0]);
        assert_eq!(rollout_human(&d, &prefix, 40, RolloutOptions::default()).unwrap().len(), 40);
    }

    #[test]
    fn argument_errors() {
        let (d, r) = models(6);
        assert!(rollout_human(&d, &[], 3, RolloutOptions::default()).is_err());
        assert!(rollout_human(&d, &human(3), 0, RolloutOptions::default()).is_err());
        let too_slow = RolloutOptions {
            refresh_every: 7,
            sample_seed: None,
        };
        assert!(rollout_human(&d, &human(3), 3, too_slow).is_err());
        assert!(rollout_robot(&r, &human(3), &vec![vec![0.0; 7]; 2], 3, RolloutOptions::default()).is_err());
    }

    #[test]
    fn rejected_frame_leaves_state_unchanged() {
        let (_, r) = models(6);
        let mut s = RolloutState::new(&r, &[0.0; 7], RolloutOptions::default()).unwrap();
        s.online_step(&r, &[0.1, 0.2]).unwrap();
        let before = s.clone();
        assert!(matches!(s.online_step(&r, &[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
        assert!(s.online_step(&r, &[0.0; 3]).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn sampling_is_seeded() {
        let (_, r) = models(6);
        let opts = RolloutOptions {
            refresh_every: 2,
            sample_seed: Some(5),
        };
        let robot = vec![vec![0.1; 7]; 4];
        let a = rollout_robot(&r, &human(4), &robot, 9, opts).unwrap();
        assert_eq!(a, rollout_robot(&r, &human(4), &robot, 9, opts).unwrap());
        assert_ne!(a, rollout_robot(&r, &human(4), &robot, 9, RolloutOptions::default()).unwrap());
    }
}
