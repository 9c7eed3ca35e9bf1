//! Lift of a 2-D canvas hand position to a human skeleton frame.
//!
//! The body holds the scale-1 rest pose. The wrist sits at the gesture's
//! reach target relative to the right shoulder; canvas x moves it forward and
//! back by up to 0.15 m, canvas y moves it along the gesture's oscillation
//! axis by up to twice the oscillation amplitude. Elbow and hand follow from
//! the arm chain.

use interact_core::data::skeleton::{add3, dot3, right_arm_chain, scale3, sub3, JointSet, REST_POSE, R_ELBOW, R_HAND, R_SHOULDER, R_WRIST};
use interact_core::data::{gesture_shape, Action};

pub const FORWARD_RANGE_M: f64 = 0.15;
const FORWARD: [f64; 3] = [1.0, 0.0, 0.0];

fn base(action: Action) -> [f64; 3] {
    add3(REST_POSE[R_SHOULDER], gesture_shape(action).target)
}

fn vertical_range(action: Action) -> f64 {
    2.0 * gesture_shape(action).osc_amplitude_m
}

/// Wrist position for a canvas point; inputs are clamped to `[-1, 1]`.
pub fn wrist_for(action: Action, hand_xy: [f64; 2]) -> [f64; 3] {
    let [x, y] = hand_xy.map(|v| v.clamp(-1.0, 1.0));
    let axis = gesture_shape(action).axis;
    add3(
        base(action),
        add3(scale3(FORWARD, x * FORWARD_RANGE_M), scale3(axis, y * vertical_range(action))),
    )
}

/// Human frame in `joints` layout for a canvas point.
pub fn lift_hand(action: Action, joints: JointSet, hand_xy: [f64; 2]) -> Vec<f64> {
    let mut pose = REST_POSE;
    let wrist = wrist_for(action, hand_xy);
    let (elbow, hand) = right_arm_chain(pose[R_SHOULDER], wrist, 1.0);
    pose[R_ELBOW] = elbow;
    pose[R_WRIST] = wrist;
    pose[R_HAND] = hand;
    joints.select(&pose)
}

/// Canvas point of a human frame's wrist relative to its shoulder.
pub fn project_hand(action: Action, joints: JointSet, frame: &[f64]) -> [f64; 2] {
    let (shoulder, wrist) = joints.shoulder_wrist(frame);
    let rel = sub3(sub3(wrist, shoulder), gesture_shape(action).target);
    let axis = gesture_shape(action).axis;
    [
        dot3(rel, FORWARD) / FORWARD_RANGE_M,
        dot3(rel, axis) / vertical_range(action),
    ]
}
