//! Non-adaptive baseline: per action and robot joint, a full-covariance
//! Gaussian over DTW-aligned training trajectories. Samples have the fixed
//! length of the alignment reference and ignore the human entirely.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{dtw_align, Action, InteractionTrial, PairType, ROBOT_DIMS};
use crate::error::{Error, Result};
use crate::nn::gaussian::standard_normal_vec;
use crate::nn::ParamTensor;

pub const MODEL_KIND: &str = "gaussian-baseline";

/// Smallest ridge, used when every aligned trajectory is identical.
pub const MIN_RIDGE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianBaselineConfig {
    /// Ridge added to the covariance diagonal, relative to its mean diagonal.
    pub ridge_rel: f64,
}

impl Default for GaussianBaselineConfig {
    fn default() -> Self {
        Self { ridge_rel: 1e-6 }
    }
}

/// Gaussian over one joint's aligned trajectory.
#[derive(Clone, Debug)]
pub struct JointGaussian {
    /// Aligned training trajectories the moments were computed from.
    pub aligned: Vec<Vec<f64>>,
    pub mean: DVector<f64>,
    /// Sample covariance (divisor `n - 1`) plus `ridge * I`.
    pub covariance: DMatrix<f64>,
    pub ridge: f64,
    chol: Cholesky<f64, Dyn>,
}

impl JointGaussian {
    pub fn fit(aligned: Vec<Vec<f64>>, ridge_rel: f64) -> Result<Self> {
        let n = aligned.len();
        if n < 2 {
            return Err(Error::InsufficientData("a Gaussian trajectory model needs at least two trials".into()));
        }
        let t = aligned[0].len();
        if aligned.iter().any(|a| a.len() != t) {
            return Err(Error::InvalidArgument("aligned trajectories differ in length".into()));
        }
        let x = DMatrix::from_fn(t, n, |i, j| aligned[j][i]);
        let mean = x.column_mean();
        let centered = DMatrix::from_fn(t, n, |i, j| x[(i, j)] - mean[i]);
        let mut covariance = (&centered * centered.transpose()) / (n - 1) as f64;
        let ridge = (ridge_rel * covariance.diagonal().mean()).max(MIN_RIDGE);
        for i in 0..t {
            covariance[(i, i)] += ridge;
        }
        let chol = Cholesky::new(covariance.clone())
            .ok_or_else(|| Error::InvalidArgument("ridged covariance is not positive definite".into()))?;
        Ok(Self {
            aligned,
            mean,
            covariance,
            ridge,
            chol,
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `mean + L * noise` with `L` the Cholesky factor of the covariance.
    pub fn transform(&self, noise: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != self.len() {
            return Err(crate::error::shape_err("baseline noise", self.len(), noise.len()));
        }
        let y = &self.mean + self.chol.l() * DVector::from_column_slice(noise);
        Ok(y.iter().copied().collect())
    }
}

impl PartialEq for JointGaussian {
    fn eq(&self, other: &Self) -> bool {
        self.aligned == other.aligned && self.mean == other.mean && self.covariance == other.covariance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTrajectoryModel {
    pub config: GaussianBaselineConfig,
    /// Per action, one Gaussian per robot joint.
    pub actions: BTreeMap<Action, Vec<JointGaussian>>,
}

impl GaussianTrajectoryModel {
    /// Trajectory length produced for `action`.
    pub fn length(&self, action: Action) -> Result<usize> {
        Ok(self.joints(action)?[0].len())
    }

    fn joints(&self, action: Action) -> Result<&[JointGaussian]> {
        self.actions
            .get(&action)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidArgument(format!("no baseline for action {action}")))
    }

    /// One draw per joint from standard normals `noise[joint]`; frames are
    /// clamped to `[-pi, pi]`.
    pub fn sample_with_noise(&self, action: Action, noise: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let joints = self.joints(action)?;
        if noise.len() != joints.len() {
            return Err(crate::error::shape_err("baseline noise joints", joints.len(), noise.len()));
        }
        let cols = joints.iter().zip(noise).map(|(g, n)| g.transform(n)).collect::<Result<Vec<_>>>()?;
        let pi = std::f64::consts::PI;
        Ok((0..joints[0].len()).map(|t| cols.iter().map(|c| c[t].clamp(-pi, pi)).collect()).collect())
    }

    /// `T_DTW x 7` robot trajectory drawn with noise from `seed`.
    pub fn sample(&self, action: Action, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = self.length(action)?;
        let noise: Vec<Vec<f64>> = (0..ROBOT_DIMS).map(|_| standard_normal_vec(&mut rng, len)).collect();
        self.sample_with_noise(action, &noise)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(MODEL_KIND, &self.config, None)?;
        for (action, joints) in &self.actions {
            for (j, g) in joints.iter().enumerate() {
                let values = g.aligned.concat();
                c.tensors.push(ParamTensor::new(format!("{action}.joint{j}.aligned"), vec![g.aligned.len(), g.len()], values)?);
            }
        }
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(&[MODEL_KIND])?;
        let config: GaussianBaselineConfig = c.config()?;
        let mut actions: BTreeMap<Action, Vec<JointGaussian>> = BTreeMap::new();
        for t in &c.tensors {
            let action: Action = t
                .name
                .split('.')
                .next()
                .and_then(|a| a.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {}", t.name)))?;
            if t.shape.len() != 2 {
                return Err(Error::Checkpoint(format!("tensor {} is not a matrix", t.name)));
            }
            let aligned = t.values.chunks(t.shape[1]).map(<[f64]>::to_vec).collect();
            actions.entry(action).or_default().push(JointGaussian::fit(aligned, config.ridge_rel)?);
        }
        if actions.values().any(|j| j.len() != ROBOT_DIMS) {
            return Err(Error::Checkpoint("every action needs one Gaussian per robot joint".into()));
        }
        Ok(Self { config, actions })
    }
}

/// Groups the robot side of the human-robot training trials by action, aligns
/// each joint's trajectories with DTW, and fits a ridged full-covariance
/// Gaussian per action and joint.
pub fn fit_gaussian_baseline(trials: &[InteractionTrial], config: GaussianBaselineConfig) -> Result<GaussianTrajectoryModel> {
    let mut by_action: BTreeMap<Action, Vec<&InteractionTrial>> = BTreeMap::new();
    for t in trials.iter().filter(|t| t.pair_type == PairType::Hri) {
        by_action.entry(t.action).or_default().push(t);
    }
    if by_action.is_empty() {
        return Err(Error::InsufficientData("no human-robot trials for the Gaussian baseline".into()));
    }
    let mut actions = BTreeMap::new();
    for (action, group) in by_action {
        if group.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "action {action} has {} human-robot training trial; the Gaussian baseline needs at least 2",
                group.len()
            )));
        }
        let mut joints = Vec::with_capacity(ROBOT_DIMS);
        for j in 0..ROBOT_DIMS {
            let seqs: Vec<Vec<f64>> = group.iter().map(|t| t.a2.frames.iter().map(|f| f[j]).collect()).collect();
            let alignment = dtw_align(&seqs)?;
            joints.push(JointGaussian::fit(alignment.aligned, config.ridge_rel)?);
        }
        log::debug!("gaussian baseline {action}: T_DTW = {}", joints[0].len());
        actions.insert(action, joints);
    }
    Ok(GaussianTrajectoryModel { config, actions })
}
