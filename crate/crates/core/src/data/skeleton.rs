//! Body-centric 19-joint skeleton: origin at the pelvis, x forward, y left,
//! z up, meters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 19;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "hips",
    "spine",
    "chest",
    "neck",
    "head",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "r_hand",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "l_hand",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
];

pub const HIPS: usize = 0;
pub const R_SHOULDER: usize = 5;
pub const R_ELBOW: usize = 6;
pub const R_WRIST: usize = 7;
pub const R_HAND: usize = 8;

/// Right arm plus torso: hips, spine, chest, neck, shoulder, elbow, wrist, hand.
pub const ARM_TORSO: [usize; 8] = [0, 1, 2, 3, 5, 6, 7, 8];

pub const UPPER_ARM_M: f64 = 0.30;
pub const FOREARM_M: f64 = 0.25;
pub const HAND_M: f64 = 0.08;

/// Rest pose for a body of scale 1. The right wrist hangs slightly forward of
/// the shoulder with a bent elbow.
pub const REST_POSE: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.0, 0.12],
    [0.0, 0.0, 0.30],
    [0.0, 0.0, 0.48],
    [0.0, 0.0, 0.60],
    [0.0, -0.18, 0.45],
    [-0.05, -0.21, 0.17],
    [0.05, -0.20, -0.05],
    [0.09, -0.20, -0.12],
    [0.0, 0.18, 0.45],
    [-0.02, 0.20, 0.15],
    [0.0, 0.20, -0.10],
    [0.0, 0.20, -0.18],
    [0.0, -0.10, -0.02],
    [0.0, -0.10, -0.45],
    [0.0, -0.10, -0.88],
    [0.0, 0.10, -0.02],
    [0.0, 0.10, -0.45],
    [0.0, 0.10, -0.88],
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointSet {
    #[default]
    Full,
    ArmTorso,
}

impl JointSet {
    pub fn indices(self) -> Vec<usize> {
        match self {
            JointSet::Full => (0..NUM_JOINTS).collect(),
            JointSet::ArmTorso => ARM_TORSO.to_vec(),
        }
    }

    pub fn dims(self) -> usize {
        3 * self.indices().len()
    }

    pub fn from_dims(dims: usize) -> Result<Self> {
        [JointSet::Full, JointSet::ArmTorso]
            .into_iter()
            .find(|s| s.dims() == dims)
            .ok_or_else(|| Error::InvalidArgument(format!("no joint set with {dims} dims")))
    }

    /// Position of a skeleton joint within this set's frame layout.
    pub fn slot(self, joint: usize) -> Option<usize> {
        self.indices().iter().position(|&j| j == joint)
    }

    /// Right shoulder and wrist positions from a frame in this layout.
    pub fn shoulder_wrist(self, frame: &[f64]) -> ([f64; 3], [f64; 3]) {
        let get = |joint| {
            let s = 3 * self.slot(joint).expect("arm joints are in every set");
            [frame[s], frame[s + 1], frame[s + 2]]
        };
        (get(R_SHOULDER), get(R_WRIST))
    }

    /// Flattens a full skeleton into this layout.
    pub fn select(self, full: &[[f64; 3]; NUM_JOINTS]) -> Vec<f64> {
        self.indices().iter().flat_map(|&j| full[j]).collect()
    }
}

pub fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

/// Elbow and hand for a shoulder/wrist pair by two-link inverse kinematics.
/// The elbow swings toward a back-outward-down pole; out-of-reach wrists are
/// pulled onto the reachable shell.
pub fn right_arm_chain(shoulder: [f64; 3], wrist: [f64; 3], body_scale: f64) -> ([f64; 3], [f64; 3]) {
    let (l1, l2) = (UPPER_ARM_M * body_scale, FOREARM_M * body_scale);
    let v = sub3(wrist, shoulder);
    let raw = norm3(v);
    let u = if raw > 1e-9 { scale3(v, 1.0 / raw) } else { [0.0, 0.0, -1.0] };
    let d = raw.clamp((l1 - l2).abs() + 1e-3, (l1 + l2) * 0.999);
    let wrist = add3(shoulder, scale3(u, d));
    let a = (l1 * l1 - l2 * l2 + d * d) / (2.0 * d);
    let r = (l1 * l1 - a * a).max(0.0).sqrt();
    let pole = [-0.4, -0.5, -0.8];
    let mut p = sub3(pole, scale3(u, dot3(pole, u)));
    let pn = norm3(p);
    p = if pn > 1e-9 { scale3(p, 1.0 / pn) } else { [-1.0, 0.0, 0.0] };
    let elbow = add3(add3(shoulder, scale3(u, a)), scale3(p, r));
    let fore = sub3(wrist, elbow);
    let hand = add3(wrist, scale3(fore, HAND_M * body_scale / norm3(fore).max(1e-9)));
    (elbow, hand)
}
