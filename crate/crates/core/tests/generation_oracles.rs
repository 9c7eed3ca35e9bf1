//! Online stepping against batch rollouts, session independence, and the
//! per-call latency of the online predictor.

use std::time::Instant;

use interact_core::data::skeleton::JointSet;
use interact_core::data::{AgentKind, Normalizer, WindowSpec, ROBOT_DIMS};
use interact_core::dynamics::{DynamicsConfig, DynamicsModel};
use interact_core::embedding::{EmbeddingConfig, EmbeddingModel};
use interact_core::generation::{rollout_robot, RolloutOptions, RolloutState};
use interact_core::robot_map::{HumanContext, RobotMapConfig, RobotModel};

fn emb(kind: AgentKind, dims: usize, cfg: EmbeddingConfig) -> EmbeddingModel {
    let normalizer = match kind {
        AgentKind::Human => Normalizer::fit_frames(kind, &human_frames(dims, 50, 0.0)).unwrap(),
        AgentKind::Robot => Normalizer::identity(kind, dims),
    };
    EmbeddingModel::new(cfg, kind, normalizer).unwrap()
}

fn small_emb(kind: AgentKind, dims: usize) -> EmbeddingModel {
    let cfg = EmbeddingConfig {
        latent_dim: 3,
        hidden: vec![8],
        window: WindowSpec { w: 8, stride: 1 },
        seed: 6,
        ..EmbeddingConfig::default()
    };
    emb(kind, dims, cfg)
}

fn human_frames(dims: usize, n: usize, phase: f64) -> Vec<Vec<f64>> {
    (0..n).map(|t| (0..dims).map(|j| 0.3 * (0.15 * t as f64 + 0.4 * j as f64 + phase).sin()).collect()).collect()
}

fn dynamics(human: EmbeddingModel, state_dim: usize, d_dim: usize) -> DynamicsModel {
    let cfg = DynamicsConfig {
        state_dim,
        d_dim,
        seed: 8,
        ..DynamicsConfig::default()
    };
    DynamicsModel::new(cfg, human).unwrap()
}

fn robot(context: HumanContext, robot_emb: EmbeddingModel, state_dim: usize) -> RobotModel {
    let cfg = RobotMapConfig {
        state_dim,
        seed: 12,
        ..RobotMapConfig::default()
    };
    RobotModel::new(cfg, robot_emb, context).unwrap()
}

fn variants() -> Vec<RobotModel> {
    let h = small_emb(AgentKind::Human, 4);
    let r = small_emb(AgentKind::Robot, ROBOT_DIMS);
    vec![
        robot(HumanContext::Dynamics(Box::new(dynamics(h.clone(), 6, 3))), r.clone(), 5),
        robot(HumanContext::RawHuman(h.normalizer.clone()), r.clone(), 5),
        robot(HumanContext::RobotOnly, r, 5),
    ]
}

#[test]
fn online_matches_rollout_at_refresh_points() {
    let rest = vec![0.05; ROBOT_DIMS];
    for model in variants() {
        for refresh in [1, 3, 4] {
            let opts = RolloutOptions {
                refresh_every: refresh,
                sample_seed: None,
            };
            let human = human_frames(4, 30, 0.2);
            let mut state = RolloutState::new(&model, &rest, opts).unwrap();
            let mut robot = vec![rest.clone()];
            for (n, x) in human.iter().enumerate() {
                let out = state.online_step(&model, x).unwrap();
                assert_eq!(out.robot_window[0], out.command);
                if (n + 1) % refresh == 0 {
                    let batch = rollout_robot(&model, &human[..=n], &robot, out.robot_window.len(), opts).unwrap();
                    assert_eq!(batch[0], out.command, "{} refresh {refresh} step {n}", model.model_kind());
                    if refresh == 1 {
                        assert_eq!(batch.len(), 8);
                    }
                }
                robot.push(out.command);
            }
        }
    }
}

#[test]
fn rollout_contract() {
    for model in variants() {
        let human = human_frames(4, 12, 0.0);
        let robot: Vec<Vec<f64>> = (0..12).map(|t| vec![3.0 * (0.3 * t as f64).sin(); ROBOT_DIMS]).collect();
        for horizon in [1, 7, 30] {
            let out = rollout_robot(&model, &human, &robot, horizon, RolloutOptions::every_step()).unwrap();
            assert_eq!(out.len(), horizon);
            assert!(out.iter().flatten().all(|a| a.abs() <= std::f64::consts::PI));
            assert_eq!(out, rollout_robot(&model, &human, &robot, horizon, RolloutOptions::every_step()).unwrap());
        }
    }
}

#[test]
fn sessions_are_independent() {
    let model = variants().remove(0);
    let rest = vec![0.0; ROBOT_DIMS];
    let (a, b) = (human_frames(4, 20, 0.0), human_frames(4, 20, 1.3));
    let solo = |frames: &[Vec<f64>]| {
        let mut s = RolloutState::new(&model, &rest, RolloutOptions::default()).unwrap();
        frames.iter().map(|x| s.online_step(&model, x).unwrap()).collect::<Vec<_>>()
    };
    let (mut sa, mut sb) = (
        RolloutState::new(&model, &rest, RolloutOptions::default()).unwrap(),
        RolloutState::new(&model, &rest, RolloutOptions::default()).unwrap(),
    );
    let mut out_a = Vec::new();
    let mut out_b = Vec::new();
    for (x, y) in a.iter().zip(&b) {
        out_a.push(sa.online_step(&model, x).unwrap());
        out_b.push(sb.online_step(&model, y).unwrap());
    }
    assert_eq!(out_a, solo(&a));
    assert_eq!(out_b, solo(&b));
}

#[test]
fn online_step_latency_at_default_dims() {
    let dims = JointSet::Full.dims();
    let human = emb(AgentKind::Human, dims, EmbeddingConfig::default());
    let robot_emb = emb(AgentKind::Robot, ROBOT_DIMS, EmbeddingConfig::default());
    let d = DynamicsConfig::default();
    let model = robot(
        HumanContext::Dynamics(Box::new(dynamics(human, d.state_dim, d.d_dim))),
        robot_emb,
        RobotMapConfig::default().state_dim,
    );
    let frames = human_frames(dims, 400, 0.0);
    let mut state = RolloutState::new(&model, &[0.0; ROBOT_DIMS], RolloutOptions::default()).unwrap();
    for x in &frames[..40] {
        state.online_step(&model, x).unwrap();
    }
    let start = Instant::now();
    for x in &frames[40..] {
        state.online_step(&model, x).unwrap();
    }
    let per_call_ms = start.elapsed().as_secs_f64() * 1e3 / 360.0;
    println!("online_step mean latency: {per_call_ms:.3} ms");
    assert!(per_call_ms < 5.0, "{per_call_ms} ms per call");
}
