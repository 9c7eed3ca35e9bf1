//! Task-dynamics objective against finite differences, partner symmetry, and
//! a short training run.

use interact_core::data::{AgentKind, AgentStream, Normalizer, WindowSpec};
use interact_core::dynamics::{train_dynamics, DynamicsConfig, DynamicsModel, KlDirection};
use interact_core::embedding::{EmbeddingConfig, EmbeddingModel};
use interact_core::nn::gradcheck::{central_differences, max_relative_error};
use interact_core::train::StepSequence;
use interact_core::Error;

const W: usize = 4;

fn embedding() -> EmbeddingModel {
    let cfg = EmbeddingConfig {
        latent_dim: 3,
        hidden: vec![8],
        window: WindowSpec { w: W, stride: 1 },
        seed: 5,
        ..EmbeddingConfig::default()
    };
    EmbeddingModel::new(cfg, AgentKind::Human, Normalizer::identity(AgentKind::Human, 2)).unwrap()
}

fn config(kl_direction: KlDirection) -> DynamicsConfig {
    DynamicsConfig {
        state_dim: 8,
        d_dim: 4,
        head_hidden: vec![6],
        jsd_samples: 5,
        kl_direction,
        seed: 11,
        ..DynamicsConfig::default()
    }
}

fn stream(len: usize, phase: f64, amp: f64) -> AgentStream {
    let frames = (0..len)
        .map(|t| {
            let a = 0.4 * t as f64 + phase;
            vec![amp * a.sin(), 0.5 * amp * a.cos()]
        })
        .collect();
    AgentStream::new(AgentKind::Human, frames, 40.0).unwrap()
}

fn pair(m: &DynamicsModel, len: usize) -> Vec<StepSequence> {
    m.prepare_group(&[&stream(len, 0.0, 1.0), &stream(len, 0.3, 0.8)]).unwrap().unwrap()
}

fn fd_error(dir: KlDirection) -> f64 {
    let m = DynamicsModel::new(config(dir), embedding()).unwrap();
    // Ten training steps per trial, and a second, shorter trial to exercise masks.
    let a = pair(&m, W + 10);
    let b = pair(&m, W + 6);
    let batch = [a.as_slice(), b.as_slice()];
    let seeds = [3, 4];
    let (_, analytic) = m.loss_and_grads(&batch, &seeds).unwrap();
    let numeric = central_differences(&m.params, 1e-5, |p| {
        let mut probe = m.clone();
        probe.params = p.clone();
        probe.loss_and_grads(&batch, &seeds).unwrap().0
    });
    max_relative_error(&analytic, &numeric)
}

#[test]
fn objective_gradient_matches_finite_differences() {
    for dir in [KlDirection::ModelToPosterior, KlDirection::PosteriorToModel] {
        let err = fd_error(dir);
        assert!(err < 1e-4, "{dir:?}: relative error {err}");
    }
}

#[test]
fn objective_is_symmetric_in_partners() {
    let m = DynamicsModel::new(config(KlDirection::ModelToPosterior), embedding()).unwrap();
    let ab = pair(&m, W + 12);
    let ba = vec![ab[1].clone(), ab[0].clone()];
    let (l1, g1) = m.loss_and_grads(&[ab.as_slice()], &[7, 8]).unwrap();
    let (l2, g2) = m.loss_and_grads(&[ba.as_slice()], &[8, 7]).unwrap();
    assert!((l1 - l2).abs() < 1e-12, "{l1} vs {l2}");
    for (x, y) in g1.0.iter().flatten().zip(g2.0.iter().flatten()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn training_reduces_latent_kl() {
    let emb = embedding();
    let streams: Vec<(AgentStream, AgentStream)> = (0..6)
        .map(|i| (stream(60 + 4 * i, 0.2 * i as f64, 1.0), stream(60 + 4 * i, 0.2 * i as f64 + 0.4, 0.7)))
        .collect();
    let groups: Vec<Vec<&AgentStream>> = streams.iter().map(|(a, b)| vec![a, b]).collect();
    let mut cfg = config(KlDirection::ModelToPosterior);
    cfg.epochs = 30;
    cfg.learning_rate = 5e-3;
    cfg.batch_trials = 3;
    cfg.tbptt = 16;
    let init = DynamicsModel::new(cfg.clone(), emb.clone()).unwrap();
    let (model, trace) = train_dynamics(&groups, &emb, &cfg).unwrap();
    assert_eq!(trace.epoch_loss.len(), 30);
    let data: Vec<Vec<StepSequence>> = groups.iter().map(|g| model.prepare_group(g).unwrap().unwrap()).collect();
    let before = init.evaluate(&data, 1).unwrap();
    let after = model.evaluate(&data, 1).unwrap();
    assert!(after.mean_kl() < before.mean_kl(), "{before:?} -> {after:?}");
    assert!(after.mean_jsd() > -0.02 && after.mean_jsd() < std::f64::consts::LN_2 + 0.05);
    let (again, _) = train_dynamics(&groups, &emb, &cfg).unwrap();
    assert_eq!(again, model);
}

#[test]
fn short_trials_are_skipped() {
    let emb = embedding();
    let (short, long) = (stream(W, 0.0, 1.0), stream(W + 20, 0.0, 1.0));
    let mut cfg = config(KlDirection::ModelToPosterior);
    cfg.epochs = 1;
    assert!(train_dynamics(&[vec![&short], vec![&long]], &emb, &cfg).is_ok());
    assert!(matches!(train_dynamics(&[vec![&short]], &emb, &cfg), Err(Error::InsufficientData(_))));
}
