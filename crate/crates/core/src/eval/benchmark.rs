//! Robot prediction benchmark: repeated observe-then-predict blocks over
//! every test trial, scored per method and joint.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::baselines::GaussianTrajectoryModel;
use crate::data::{AgentStream, InteractionTrial, PairType, ROBOT_DIMS};
use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::eval::entrainment::{entrainment_score, EntrainmentConfig, EntrainmentScore};
use crate::eval::metrics::{mspe_curve, nrmsd, HorizonCurve};
use crate::generation::{rollout_robot, RolloutOptions};
use crate::robot_map::{HumanContext, RobotModel};

pub const METHODS: [&str; 4] = ["hme", "raw_hr", "raw_r", "gaussian"];

/// Published all-joint averages on recorded data, kept for context only.
pub const REFERENCE_NRMSD_AVG: [(&str, f64); 4] = [("hme", 0.16), ("raw_hr", 0.22), ("raw_r", 0.18), ("gaussian", 0.20)];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Frames of true data provided at the start of each block.
    pub observe: usize,
    /// Frames predicted per block.
    pub predict: usize,
    pub stride: usize,
    /// Predicted windows are re-decoded every this many frames; 40 decodes
    /// one window per block, so the 30 predicted frames come from the window
    /// decoded at the end of the observation.
    pub refresh_every: usize,
    pub entrainment: EntrainmentConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            observe: 10,
            predict: 30,
            stride: 40,
            refresh_every: 40,
            entrainment: EntrainmentConfig::default(),
        }
    }
}

pub struct BenchmarkModels<'a> {
    pub hme: &'a RobotModel,
    pub raw_hr: &'a RobotModel,
    pub raw_r: &'a RobotModel,
    pub gaussian: &'a GaussianTrajectoryModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub nrmsd_per_joint: Vec<f64>,
    pub nrmsd_avg: f64,
    /// RMS error per offset of `w`-frame predictions, normalized robot units.
    pub mspe_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntrainmentReport {
    /// Mean over trials of the factor-2 maximum cross-correlation.
    pub factor2_corr: f64,
    /// Mean over trials of the lag of that maximum, frames.
    pub lag: f64,
    /// Mean over trials of the permutation threshold.
    pub threshold: f64,
    pub trials: Vec<EntrainmentScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub observe: usize,
    pub predict: usize,
    pub stride: usize,
    pub window: usize,
    pub refresh_every: usize,
    pub test_trials: usize,
    /// How NRMSD is averaged: per trial, then over trials.
    pub averaging: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntrainmentSection {
    pub per_action: BTreeMap<String, EntrainmentReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub config_hash: String,
    pub protocol: ProtocolReport,
    pub methods: BTreeMap<String, MethodReport>,
    pub reference_nrmsd_avg: BTreeMap<String, f64>,
    /// Task-dynamics window prediction error on held-out human-human
    /// trials, meters.
    pub human_mspe_curve: Vec<f64>,
    pub entrainment: EntrainmentSection,
}

impl BenchmarkReport {
    /// Flat `section,name,key,index,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,name,key,index,value\n");
        let mut row = |section: &str, name: &str, key: &str, index: usize, value: f64| {
            out.push_str(&format!("{section},{name},{key},{index},{value}\n"));
        };
        for (m, r) in &self.methods {
            for (j, v) in r.nrmsd_per_joint.iter().enumerate() {
                row("method", m, "nrmsd_joint", j, *v);
            }
            row("method", m, "nrmsd_avg", 0, r.nrmsd_avg);
            for (k, v) in r.mspe_curve.iter().enumerate() {
                row("method", m, "mspe", k + 1, *v);
            }
        }
        for (k, v) in self.human_mspe_curve.iter().enumerate() {
            row("human", "dynamics", "mspe", k + 1, *v);
        }
        for (a, e) in &self.entrainment.per_action {
            row("entrainment", a, "factor2_corr", 0, e.factor2_corr);
            row("entrainment", a, "lag", 0, e.lag);
            row("entrainment", a, "threshold", 0, e.threshold);
        }
        out
    }
}

/// RMS error per offset of the window decoded at observation points
/// `t0 + observe` (`t0 = 0, stride, ...`) against the recorded frames, in
/// the streams' raw units. States are unrolled over true frames from the
/// start of each stream.
pub fn human_mspe(model: &DynamicsModel, streams: &[&AgentStream], observe: usize, stride: usize) -> Result<HorizonCurve> {
    let w = model.embedding.window_len();
    let dims = model.frame_dims();
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for s in streams {
        let x = model.normalizer().apply(&s.frames);
        let mut h = model.initial_state();
        for (t, frame) in x.iter().enumerate() {
            if t >= observe && (t - observe) % stride.max(1) == 0 && t + w <= x.len() {
                let d = model.dynamics_dist(&h)?.mean;
                let flat = model.predict_window(&d)?;
                let frames: Vec<Vec<f64>> = flat.chunks(dims).map(<[f64]>::to_vec).collect();
                pred.push(model.normalizer().invert(&frames));
                truth.push(s.frames[t..t + w].to_vec());
            }
            h = model.advance(&h, frame)?.0;
        }
    }
    mspe_curve(&pred, &truth, "m")
}

struct Scored {
    /// Per trial: predicted and true frames of every scored block, in order.
    nrmsd_pred: Vec<Vec<Vec<f64>>>,
    nrmsd_truth: Vec<Vec<Vec<f64>>>,
    mspe_pred: Vec<Vec<Vec<f64>>>,
    mspe_truth: Vec<Vec<Vec<f64>>>,
}

fn blocks(len: usize, cfg: &BenchmarkConfig) -> impl Iterator<Item = usize> {
    let (need, stride) = (cfg.observe + cfg.predict, cfg.stride.max(1));
    (0..).map(move |i| i * stride).take_while(move |t0| t0 + need <= len)
}

fn score_method(
    trials: &[&InteractionTrial],
    cfg: &BenchmarkConfig,
    w: usize,
    mut predict: impl FnMut(usize, &InteractionTrial, usize, usize) -> Result<Vec<Vec<f64>>>,
    normalize: impl Fn(&[Vec<f64>]) -> Vec<Vec<f64>>,
) -> Result<Scored> {
    let mut s = Scored {
        nrmsd_pred: Vec::new(),
        nrmsd_truth: Vec::new(),
        mspe_pred: Vec::new(),
        mspe_truth: Vec::new(),
    };
    for (i, trial) in trials.iter().enumerate() {
        let (mut p, mut t) = (Vec::new(), Vec::new());
        for t0 in blocks(trial.len(), cfg) {
            let start = t0 + cfg.observe;
            let with_window = start + w <= trial.len();
            let horizon = if with_window { w.max(cfg.predict) } else { cfg.predict };
            let out = predict(i, trial, start, horizon)?;
            p.extend_from_slice(&out[..cfg.predict]);
            t.extend_from_slice(&trial.a2.frames[start..start + cfg.predict]);
            if with_window {
                s.mspe_pred.push(normalize(&out[..w]));
                s.mspe_truth.push(normalize(&trial.a2.frames[start..start + w]));
            }
        }
        if !p.is_empty() {
            s.nrmsd_pred.push(p);
            s.nrmsd_truth.push(t);
        }
    }
    Ok(s)
}

/// Runs every method over the human-robot test trials. The Gaussian
/// baseline draws one sample per trial with seed `seed + trial index`, read
/// at frame `min(t, T_DTW - 1)`.
pub fn run_benchmark(
    models: &BenchmarkModels<'_>,
    test: &[InteractionTrial],
    cfg: &BenchmarkConfig,
    seed: u64,
    config_hash: &str,
) -> Result<BenchmarkReport> {
    let HumanContext::Dynamics(dynamics) = &models.hme.context else {
        return Err(Error::InvalidArgument("the main model must use task dynamics".into()));
    };
    let trials: Vec<&InteractionTrial> = test.iter().filter(|t| t.pair_type == PairType::Hri).collect();
    let scorable = trials.iter().filter(|t| blocks(t.len(), cfg).next().is_some()).count();
    if scorable == 0 {
        return Err(Error::InsufficientData("no human-robot test trial is long enough for one benchmark block".into()));
    }
    let w = models.hme.embedding.window_len();
    let normalizer = models.hme.normalizer();
    let opts = RolloutOptions {
        refresh_every: cfg.refresh_every,
        sample_seed: None,
    };
    let normalize = |frames: &[Vec<f64>]| normalizer.apply(frames);
    let mut methods = BTreeMap::new();
    for name in METHODS {
        let scored = match name {
            "gaussian" => {
                let mut cache: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
                score_method(
                    &trials,
                    cfg,
                    w,
                    |i, trial, start, horizon| {
                        if !cache.contains_key(&i) {
                            cache.insert(i, models.gaussian.sample(trial.action, seed.wrapping_add(i as u64))?);
                        }
                        let g = &cache[&i];
                        Ok((start..start + horizon).map(|t| g[t.min(g.len() - 1)].clone()).collect())
                    },
                    normalize,
                )?
            }
            _ => {
                let model = match name {
                    "hme" => models.hme,
                    "raw_hr" => models.raw_hr,
                    _ => models.raw_r,
                };
                score_method(
                    &trials,
                    cfg,
                    w,
                    |_, trial, start, horizon| rollout_robot(model, &trial.a1.frames[..start], &trial.a2.frames[..start], horizon, opts),
                    normalize,
                )?
            }
        };
        let per_joint = (0..ROBOT_DIMS)
            .map(|j| nrmsd(&scored.nrmsd_pred, &scored.nrmsd_truth, normalizer, j))
            .collect::<Result<Vec<_>>>()?;
        let mspe = if scored.mspe_pred.is_empty() {
            Vec::new()
        } else {
            mspe_curve(&scored.mspe_pred, &scored.mspe_truth, "normalized")?.values
        };
        methods.insert(
            name.to_string(),
            MethodReport {
                nrmsd_avg: per_joint.iter().sum::<f64>() / ROBOT_DIMS as f64,
                nrmsd_per_joint: per_joint,
                mspe_curve: mspe,
            },
        );
        log::info!("benchmark {name}: NRMSD {:.4}", methods[name].nrmsd_avg);
    }

    // Human horizon curve on held-out human-human trials (both partners);
    // human-robot humans stand in when the split has none.
    let hhi: Vec<&AgentStream> = test
        .iter()
        .filter(|t| t.pair_type == PairType::Hhi)
        .flat_map(|t| [&t.a1, &t.a2])
        .collect();
    let humans: Vec<&AgentStream> = if hhi.is_empty() { trials.iter().map(|t| &t.a1).collect() } else { hhi };
    let human_mspe_curve = human_mspe(dynamics, &humans, cfg.observe, cfg.stride)
        .map(|c| c.values)
        .unwrap_or_default();

    let mut per_action: BTreeMap<String, Vec<EntrainmentScore>> = BTreeMap::new();
    for (i, trial) in trials.iter().enumerate() {
        if trial.len() < cfg.entrainment.max_lag + 3 {
            continue;
        }
        let d = dynamics.extract_dynamics_means(&dynamics.normalizer().apply(&trial.a1.frames))?;
        let z = models.hme.latent_means(&trial.a2.frames, &trial.a1.frames)?;
        let score = entrainment_score(&d, &z, &cfg.entrainment, seed.wrapping_add(i as u64))?;
        per_action.entry(trial.action.to_string()).or_default().push(score);
    }
    let per_action = per_action
        .into_iter()
        .map(|(a, scores)| {
            let n = scores.len() as f64;
            let report = EntrainmentReport {
                factor2_corr: scores.iter().map(|s| s.corr).sum::<f64>() / n,
                lag: scores.iter().map(|s| s.lag as f64).sum::<f64>() / n,
                threshold: scores.iter().map(|s| s.threshold).sum::<f64>() / n,
                trials: scores,
            };
            (a, report)
        })
        .collect();

    Ok(BenchmarkReport {
        seed,
        config_hash: config_hash.to_string(),
        protocol: ProtocolReport {
            observe: cfg.observe,
            predict: cfg.predict,
            stride: cfg.stride,
            window: w,
            refresh_every: cfg.refresh_every,
            test_trials: scorable,
            averaging: "trials".into(),
        },
        methods,
        reference_nrmsd_avg: REFERENCE_NRMSD_AVG.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        human_mspe_curve,
        entrainment: EntrainmentSection { per_action },
    })
}
