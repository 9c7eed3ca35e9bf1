//! Fixed human-wrist to 7-DoF robot-arm map used to build robot demonstrations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::skeleton::{sub3, JointSet};
use super::types::{AgentKind, AgentStream, ROBOT_DIMS};
use crate::error::{Error, Result};

/// Planar arm geometry for joints 1-3 (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embodiment {
    pub links: [f64; 3],
}

impl Default for Embodiment {
    fn default() -> Self {
        Self {
            links: [0.30, 0.25, 0.15],
        }
    }
}

fn wrap(a: f64) -> f64 {
    a.sin().atan2(a.cos()).clamp(-PI, PI)
}

impl Embodiment {
    /// Robot angles for a wrist position relative to the right shoulder.
    ///
    /// The wrist is projected onto the sagittal (forward, up) plane; the end
    /// link points along the reach direction and joints 1-2 solve the
    /// remaining two-link problem elbow-down. Joints 4-7 are smooth functions
    /// of wrist height and lateral offset, which carries side-to-side waving.
    pub fn angles(&self, wrist_rel: [f64; 3]) -> [f64; ROBOT_DIMS] {
        let [a, b, c] = self.links;
        let (px, py, pz) = (wrist_rel[0], wrist_rel[1], wrist_rel[2]);
        let reach = (px * px + pz * pz).sqrt();
        let (ux, uz) = if reach > 1e-9 { (px / reach, pz / reach) } else { (0.0, -1.0) };
        let phi = uz.atan2(ux);
        let dist = (reach - c).clamp((a - b).abs() + 1e-3, (a + b) * 0.998);
        let (cx, cz) = (ux * dist, uz * dist);
        let cos_q2 = ((dist * dist - a * a - b * b) / (2.0 * a * b)).clamp(-1.0, 1.0);
        let q2 = -cos_q2.acos();
        let q1 = cz.atan2(cx) - (b * q2.sin()).atan2(a + b * q2.cos());
        let q3 = phi - q1 - q2;
        let h = pz;
        let lat = py + 0.05;
        [
            wrap(q1),
            wrap(q2),
            wrap(q3),
            wrap(0.6 * (3.0 * h).tanh()),
            wrap(0.9 * (5.0 * lat).tanh()),
            wrap(0.5 * (q1 + q2).sin()),
            wrap(0.3 * (3.0 * h).tanh() * (5.0 * lat).tanh()),
        ]
    }

    /// Maps every frame of a human stream (any supported joint layout).
    pub fn map_stream(&self, human: &AgentStream) -> Result<AgentStream> {
        if human.kind != AgentKind::Human {
            return Err(Error::InvalidArgument("embodiment map needs a human stream".into()));
        }
        let set = JointSet::from_dims(human.dims)?;
        let frames = human
            .frames
            .iter()
            .map(|f| {
                let (s, w) = set.shoulder_wrist(f);
                self.angles(sub3(w, s)).to_vec()
            })
            .collect();
        AgentStream::new(AgentKind::Robot, frames, human.rate_hz)
    }

    /// Planar forward kinematics of joints 1-3: end point in (forward, up).
    pub fn planar_end(&self, q: &[f64]) -> [f64; 2] {
        let mut angle = 0.0;
        let mut p = [0.0, 0.0];
        for (len, qi) in self.links.iter().zip(q) {
            angle += qi;
            p[0] += len * angle.cos();
            p[1] += len * angle.sin();
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::skeleton::{JointSet, REST_POSE};

    #[test]
    fn planar_ik_reaches_projected_wrist() {
        let e = Embodiment::default();
        for w in [[0.4, -0.05, -0.2], [0.1, 0.1, 0.4], [0.3, 0.0, 0.3], [0.05, -0.02, -0.5]] {
            let q = e.angles(w);
            let p = e.planar_end(&q);
            assert!((p[0] - w[0]).abs() < 1e-9 && (p[1] - w[2]).abs() < 1e-9, "{w:?} -> {p:?}");
            assert!(q.iter().all(|a| a.abs() <= PI));
        }
    }

    #[test]
    fn constant_stream_maps_to_constant() {
        let frame = JointSet::ArmTorso.select(&REST_POSE);
        let human = AgentStream::new(AgentKind::Human, vec![frame; 20], 40.0).unwrap();
        let e = Embodiment::default();
        let robot = e.map_stream(&human).unwrap();
        assert_eq!(robot.dims, 7);
        assert!(robot.frames.windows(2).all(|p| p[0] == p[1]));
        assert_eq!(robot, e.map_stream(&human).unwrap());
    }

    #[test]
    fn unreachable_points_are_clamped() {
        let e = Embodiment::default();
        for w in [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [-0.1, 0.0, 0.01]] {
            assert!(e.angles(w).iter().all(|a| a.is_finite() && a.abs() <= PI));
        }
    }
}
