//! Synthetic two-agent gesture recordings: rest, minimum-jerk reach,
//! oscillation, retract.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::embodiment::Embodiment;
use super::skeleton::{add3, right_arm_chain, scale3, sub3, JointSet, NUM_JOINTS, REST_POSE, R_ELBOW, R_HAND, R_SHOULDER, R_WRIST};
use super::types::{Action, AgentKind, AgentStream, InteractionTrial, PairType, Role, CANONICAL_RATE_HZ};
use crate::error::{Error, Result};

/// Generation knobs for one action and pair type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSynth {
    pub trials: usize,
    pub duration_s: [f64; 2],
    pub cycles: [f64; 2],
    /// Multiplies every displacement from the rest pose.
    pub amplitude: f64,
    pub phase_jitter_rad: f64,
    pub ramp_s: f64,
    pub noise_std_m: f64,
}

impl ActionSynth {
    fn table(trials: usize, duration_s: [f64; 2], ramp_s: f64) -> Self {
        Self {
            trials,
            duration_s,
            cycles: [3.0, 6.0],
            amplitude: 1.0,
            phase_jitter_rad: 0.3,
            ramp_s,
            noise_std_m: 0.0005,
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("{what}: {m}")));
        let [d0, d1] = self.duration_s;
        let [c0, c1] = self.cycles;
        if !(d0 > 0.0 && d0 <= d1 && d1.is_finite()) {
            return bad("duration range must satisfy 0 < min <= max");
        }
        if !(c0 > 0.0 && c0 <= c1 && c1.is_finite()) {
            return bad("cycle range must satisfy 0 < min <= max");
        }
        if !(self.amplitude >= 0.0 && self.phase_jitter_rad >= 0.0 && self.noise_std_m >= 0.0 && self.ramp_s >= 0.0) {
            return bad("amplitude, jitter, ramp and noise must be non-negative");
        }
        if 0.8 * d0 - 2.0 * self.ramp_s < 0.5 {
            return bad("ramps leave less than 0.5 s of oscillation at the shortest duration");
        }
        if (d0 * CANONICAL_RATE_HZ - 1e-9).ceil() > (d1 * CANONICAL_RATE_HZ + 1e-9).floor() {
            return bad("duration range contains no whole frame count");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub joints: JointSet,
    /// Delay of the robot partner behind the human in robot recordings.
    pub follower_lag_s: f64,
    pub body_scale: [f64; 2],
    pub hhi: BTreeMap<Action, ActionSynth>,
    pub hri: BTreeMap<Action, ActionSynth>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let hhi = BTreeMap::from([
            (Action::HandShake, ActionSynth::table(38, [8.5, 12.5], 1.2)),
            (Action::HandWave, ActionSynth::table(31, [8.5, 17.5], 1.5)),
            (Action::Parachute, ActionSynth::table(49, [7.0, 12.0], 1.2)),
            (Action::Rocket, ActionSynth::table(70, [3.0, 6.0], 0.5)),
        ]);
        let hri = BTreeMap::from([
            (Action::HandShake, ActionSynth::table(10, [10.4, 14.5], 1.2)),
            (Action::HandWave, ActionSynth::table(10, [12.7, 17.4], 1.5)),
            (Action::Parachute, ActionSynth::table(11, [11.0, 14.3], 1.2)),
            (Action::Rocket, ActionSynth::table(10, [11.1, 13.8], 1.2)),
        ]);
        Self {
            seed: 0,
            joints: JointSet::Full,
            follower_lag_s: 0.25,
            body_scale: [0.92, 1.08],
            hhi,
            hri,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (a, s) in &self.hhi {
            s.validate(&format!("hhi.{a}"))?;
        }
        for (a, s) in &self.hri {
            s.validate(&format!("hri.{a}"))?;
        }
        let [s0, s1] = self.body_scale;
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return Err(Error::InvalidArgument("body_scale must satisfy 0 < min <= max".into()));
        }
        if !(0.0..=2.0).contains(&self.follower_lag_s) {
            return Err(Error::InvalidArgument("follower_lag_s must lie in [0, 2]".into()));
        }
        Ok(())
    }

    /// Keeps only the listed actions.
    pub fn restrict(mut self, actions: &[Action]) -> Self {
        self.hhi.retain(|a, _| actions.contains(a));
        self.hri.retain(|a, _| actions.contains(a));
        self
    }

    fn table(&self, pair: PairType) -> &BTreeMap<Action, ActionSynth> {
        match pair {
            PairType::Hhi => &self.hhi,
            PairType::Hri => &self.hri,
        }
    }
}

/// Right-wrist geometry of a gesture for a body of scale 1, relative to the
/// right shoulder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GestureShape {
    pub target: [f64; 3],
    pub axis: [f64; 3],
    pub osc_amplitude_m: f64,
    /// Drift of the oscillation centre over the oscillation phase.
    pub trend: [f64; 3],
}

pub fn gesture_shape(action: Action) -> GestureShape {
    match action {
        Action::HandShake => GestureShape {
            target: [0.40, 0.12, -0.28],
            axis: [0.0, 0.0, 1.0],
            osc_amplitude_m: 0.06,
            trend: [0.0; 3],
        },
        Action::HandWave => GestureShape {
            target: [0.12, -0.12, 0.40],
            axis: [0.0, 1.0, 0.0],
            osc_amplitude_m: 0.14,
            trend: [0.0; 3],
        },
        Action::Parachute => GestureShape {
            target: [0.35, 0.10, 0.30],
            axis: [0.0, 1.0, 0.0],
            osc_amplitude_m: 0.07,
            trend: [0.05, 0.0, -0.40],
        },
        Action::Rocket => GestureShape {
            target: [0.38, 0.12, -0.35],
            axis: [0.0, 1.0, 0.0],
            osc_amplitude_m: 0.03,
            trend: [0.02, 0.0, 0.50],
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentPlan {
    pub body_scale: f64,
    pub phase_rad: f64,
    pub reach_offset: [f64; 3],
    pub lean_rad: f64,
    pub side_lean_rad: f64,
    pub delay_s: f64,
}

/// Every random draw of one trial; rendering only adds sensor noise.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialPlan {
    pub trial_id: String,
    pub action: Action,
    pub pair_type: PairType,
    pub frames: usize,
    pub rest_pre_s: f64,
    pub ramp_s: f64,
    pub osc_s: f64,
    pub cycles: f64,
    pub freq_hz: f64,
    pub amplitude: f64,
    pub noise_std_m: f64,
    pub agents: [AgentPlan; 2],
    pub noise_seed: u64,
}

fn min_jerk(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
}

impl TrialPlan {
    pub fn duration_s(&self) -> f64 {
        self.frames as f64 / CANONICAL_RATE_HZ
    }

    pub fn osc_start_s(&self) -> f64 {
        self.rest_pre_s + self.ramp_s
    }

    /// Frame range of agent `k`'s oscillation phase.
    pub fn osc_frames(&self, k: usize) -> std::ops::Range<usize> {
        let start = self.osc_start_s() + self.agents[k].delay_s;
        let a = (start * CANONICAL_RATE_HZ).ceil() as usize;
        let b = (((start + self.osc_s) * CANONICAL_RATE_HZ).floor() as usize + 1).min(self.frames);
        a..b
    }

    fn taper(&self, tau: f64) -> f64 {
        let edge = (self.osc_s / 4.0).min(0.3);
        let up = (tau / edge).clamp(0.0, 1.0);
        let down = ((self.osc_s - tau) / edge).clamp(0.0, 1.0);
        let c = |x: f64| 0.5 - 0.5 * (PI * x).cos();
        c(up) * c(down)
    }

    /// Noise-free skeleton of agent `k` at time `t`.
    pub fn pose(&self, k: usize, t: f64) -> [[f64; 3]; NUM_JOINTS] {
        let ag = &self.agents[k];
        let shape = gesture_shape(self.action);
        let s = ag.body_scale;
        let amp = self.amplitude;
        let tau = t - ag.delay_s;
        let r0 = self.rest_pre_s;
        let (ramp, osc) = (self.ramp_s, self.osc_s);
        let reach = if tau < r0 {
            0.0
        } else if tau < r0 + ramp {
            min_jerk((tau - r0) / ramp.max(1e-9))
        } else if tau < r0 + ramp + osc {
            1.0
        } else {
            1.0 - min_jerk((tau - r0 - ramp - osc) / ramp.max(1e-9))
        };
        let tau_o = tau - r0 - ramp;
        let trend = min_jerk(tau_o / osc);
        let wave = if (0.0..=osc).contains(&tau_o) {
            self.taper(tau_o) * (2.0 * PI * self.freq_hz * tau_o + ag.phase_rad).sin()
        } else {
            0.0
        };

        let lean = amp * (ag.lean_rad * reach + 0.03 * wave);
        let roll = amp * (ag.side_lean_rad + 0.04 * wave);
        let rotate = |p: [f64; 3]| {
            let (sl, cl) = lean.sin_cos();
            let (x, y, z) = (p[0] * cl + p[2] * sl, p[1], -p[0] * sl + p[2] * cl);
            let (sr, cr) = roll.sin_cos();
            [x, y * cr - z * sr, y * sr + z * cr]
        };

        let mut out = [[0.0; 3]; NUM_JOINTS];
        for (j, rest) in REST_POSE.iter().enumerate() {
            let p = scale3(*rest, s);
            out[j] = if (1..=12).contains(&j) { rotate(p) } else { p };
        }
        let shoulder_rest = scale3(REST_POSE[R_SHOULDER], s);
        let wrist_rest = scale3(REST_POSE[R_WRIST], s);
        let peak = add3(shoulder_rest, scale3(add3(shape.target, ag.reach_offset), s));
        let centre = add3(
            add3(wrist_rest, scale3(sub3(peak, wrist_rest), amp)),
            scale3(shape.trend, amp * s * trend),
        );
        let wrist = add3(
            add3(wrist_rest, scale3(sub3(centre, wrist_rest), reach)),
            scale3(shape.axis, amp * s * shape.osc_amplitude_m * wave),
        );
        let (elbow, hand) = right_arm_chain(out[R_SHOULDER], wrist, s);
        out[R_ELBOW] = elbow;
        out[R_WRIST] = wrist;
        out[R_HAND] = hand;
        out
    }

    /// Noisy skeleton frames of agent `k`, one per 40 Hz tick.
    pub fn render(&self, k: usize) -> Vec<[[f64; 3]; NUM_JOINTS]> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed.wrapping_add(k as u64));
        let noise = Normal::new(0.0, self.noise_std_m.max(0.0)).expect("finite std");
        (0..self.frames)
            .map(|i| {
                let mut p = self.pose(k, i as f64 / CANONICAL_RATE_HZ);
                if self.noise_std_m > 0.0 {
                    for joint in p.iter_mut().skip(1) {
                        for v in joint.iter_mut() {
                            *v += noise.sample(&mut rng);
                        }
                    }
                }
                p
            })
            .collect()
    }
}

/// Draws the plan of one trial from its own seed.
pub fn plan_trial(cfg: &SynthConfig, pair: PairType, action: Action, index: usize, seed: u64) -> Result<TrialPlan> {
    let a = cfg
        .table(pair)
        .get(&action)
        .ok_or_else(|| Error::InvalidArgument(format!("no {pair:?} settings for {action}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = (a.duration_s[0] * CANONICAL_RATE_HZ - 1e-9).ceil() as usize;
    let hi = (a.duration_s[1] * CANONICAL_RATE_HZ + 1e-9).floor() as usize;
    let frames = rng.gen_range(lo..=hi);
    let duration = frames as f64 / CANONICAL_RATE_HZ;
    let rest_pre = rng.gen_range(0.05..=0.1) * duration;
    let rest_post = rng.gen_range(0.05..=0.1) * duration;
    let osc_s = duration - rest_pre - rest_post - 2.0 * a.ramp_s;
    let cycles = rng.gen_range(a.cycles[0]..=a.cycles[1]);
    let base_phase = rng.gen_range(0.0..2.0 * PI);
    let jitter = if a.phase_jitter_rad > 0.0 {
        rng.gen_range(-a.phase_jitter_rad..=a.phase_jitter_rad)
    } else {
        0.0
    };
    let mut agent = |phase: f64, delay_s: f64| AgentPlan {
        body_scale: rng.gen_range(cfg.body_scale[0]..=cfg.body_scale[1]),
        phase_rad: phase,
        reach_offset: [0; 3].map(|_| rng.gen_range(-0.03..=0.03)),
        lean_rad: rng.gen_range(0.06..=0.15),
        side_lean_rad: rng.gen_range(-0.06..=0.06),
        delay_s,
    };
    let first = agent(base_phase, 0.0);
    let lag = if pair == PairType::Hri { cfg.follower_lag_s } else { 0.0 };
    let second = agent(base_phase + jitter, lag);
    Ok(TrialPlan {
        trial_id: format!("{}-{}-{:03}", if pair == PairType::Hhi { "hhi" } else { "hri" }, action, index),
        action,
        pair_type: pair,
        frames,
        rest_pre_s: rest_pre,
        ramp_s: a.ramp_s,
        osc_s,
        cycles,
        freq_hz: cycles / osc_s,
        amplitude: a.amplitude,
        noise_std_m: a.noise_std_m,
        agents: [first, second],
        noise_seed: rng.gen(),
    })
}

fn trial_seeds(cfg: &SynthConfig, pair: PairType) -> Vec<(Action, usize, u64)> {
    let base = match pair {
        PairType::Hhi => cfg.seed,
        PairType::Hri => cfg.seed.wrapping_add(1 << 32),
    };
    let mut out = Vec::new();
    for (action, a) in cfg.table(pair) {
        for i in 0..a.trials {
            out.push((*action, i, base.wrapping_add(out.len() as u64)));
        }
    }
    out
}

/// Plans of every trial the generator would emit for `pair`.
pub fn plan_all(cfg: &SynthConfig, pair: PairType) -> Result<Vec<TrialPlan>> {
    cfg.validate()?;
    trial_seeds(cfg, pair)
        .into_iter()
        .map(|(action, i, seed)| plan_trial(cfg, pair, action, i, seed))
        .collect()
}

fn human_stream(frames: &[[[f64; 3]; NUM_JOINTS]], joints: JointSet) -> Result<AgentStream> {
    AgentStream::new(
        AgentKind::Human,
        frames.iter().map(|p| joints.select(p)).collect(),
        CANONICAL_RATE_HZ,
    )
}

fn leader(action: Action) -> Option<Role> {
    action.has_leader().then_some(Role::A1)
}

pub fn render_trial(plan: &TrialPlan, joints: JointSet, embodiment: &Embodiment) -> Result<InteractionTrial> {
    let a1 = human_stream(&plan.render(0), joints)?;
    let partner = plan.render(1);
    let a2 = match plan.pair_type {
        PairType::Hhi => human_stream(&partner, joints)?,
        PairType::Hri => {
            let full = human_stream(&partner, JointSet::Full)?;
            embodiment.map_stream(&full)?
        }
    };
    Ok(InteractionTrial {
        trial_id: plan.trial_id.clone(),
        action: plan.action,
        pair_type: plan.pair_type,
        a1,
        a2,
        leader: leader(plan.action),
    })
}

pub fn synth_generate_hhi(cfg: &SynthConfig) -> Result<Vec<InteractionTrial>> {
    plan_all(cfg, PairType::Hhi)?
        .iter()
        .map(|p| render_trial(p, cfg.joints, &Embodiment::default()))
        .collect()
}

pub fn synth_generate_hri(cfg: &SynthConfig, embodiment: &Embodiment) -> Result<Vec<InteractionTrial>> {
    plan_all(cfg, PairType::Hri)?
        .iter()
        .map(|p| render_trial(p, cfg.joints, embodiment))
        .collect()
}

/// Noise-free rest frame of a scale-1 body in the given layout.
pub fn rest_frame(joints: JointSet) -> Vec<f64> {
    joints.select(&REST_POSE)
}

/// Robot angles for the scale-1 rest pose.
pub fn robot_rest_frame(embodiment: &Embodiment) -> Vec<f64> {
    embodiment.angles(sub3(REST_POSE[R_WRIST], REST_POSE[R_SHOULDER])).to_vec()
}
