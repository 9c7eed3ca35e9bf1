use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical sampling rate shared by human and robot streams.
pub const CANONICAL_RATE_HZ: f64 = 40.0;
/// Joint angles per robot arm.
pub const ROBOT_DIMS: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Human,
    Robot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    HandShake,
    HandWave,
    Parachute,
    Rocket,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::HandShake, Action::HandWave, Action::Parachute, Action::Rocket];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::HandShake => "hand_shake",
            Action::HandWave => "hand_wave",
            Action::Parachute => "parachute",
            Action::Rocket => "rocket",
        }
    }

    /// Parachute and rocket fist-bumps have a leader and a follower.
    pub fn has_leader(self) -> bool {
        matches!(self, Action::Parachute | Action::Rocket)
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown action {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairType {
    #[serde(rename = "HHI")]
    Hhi,
    #[serde(rename = "HRI")]
    Hri,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    A1,
    A2,
}

/// One agent's recorded frames, `T x dims`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentStream {
    pub kind: AgentKind,
    pub dims: usize,
    pub frames: Vec<Vec<f64>>,
    pub rate_hz: f64,
}

impl AgentStream {
    pub fn new(kind: AgentKind, frames: Vec<Vec<f64>>, rate_hz: f64) -> Result<Self> {
        let dims = frames.first().map_or(0, Vec::len);
        let s = Self {
            kind,
            dims,
            frames,
            rate_hz,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidArgument("stream has no frames".into()));
        }
        if self.dims == 0 {
            return Err(Error::InvalidArgument("stream has zero dims".into()));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid rate {}", self.rate_hz)));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.len() != self.dims {
                return Err(Error::InvalidArgument(format!("frame {t} has {} values, expected {}", f.len(), self.dims)));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("frame {t}")));
            }
            if self.kind == AgentKind::Robot && f.iter().any(|v| v.abs() > std::f64::consts::PI) {
                return Err(Error::InvalidArgument(format!("robot frame {t} has an angle outside [-pi, pi]")));
            }
        }
        if self.kind == AgentKind::Robot && self.dims != ROBOT_DIMS {
            return Err(Error::InvalidArgument(format!("robot stream must have {ROBOT_DIMS} dims")));
        }
        Ok(())
    }
}

/// One paired recording.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionTrial {
    pub trial_id: String,
    pub action: Action,
    pub pair_type: PairType,
    pub a1: AgentStream,
    pub a2: AgentStream,
    pub leader: Option<Role>,
}

impl InteractionTrial {
    pub fn len(&self) -> usize {
        self.a1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a1.is_empty()
    }

    pub fn rate_hz(&self) -> f64 {
        self.a1.rate_hz
    }

    pub fn validate(&self) -> Result<()> {
        self.a1.validate()?;
        self.a2.validate()?;
        if self.a1.len() != self.a2.len() {
            return Err(Error::InvalidArgument(format!(
                "trial {}: agents have {} and {} frames",
                self.trial_id,
                self.a1.len(),
                self.a2.len()
            )));
        }
        if self.a1.kind != AgentKind::Human {
            return Err(Error::InvalidArgument(format!("trial {}: a1 must be human", self.trial_id)));
        }
        let expected = match self.pair_type {
            PairType::Hhi => AgentKind::Human,
            PairType::Hri => AgentKind::Robot,
        };
        if self.a2.kind != expected {
            return Err(Error::InvalidArgument(format!(
                "trial {}: {:?} trial needs a2 of kind {:?}",
                self.trial_id, self.pair_type, expected
            )));
        }
        Ok(())
    }

    /// Streams of the requested kind (both partners of a human-human trial).
    pub fn streams_of(&self, kind: AgentKind) -> impl Iterator<Item = &AgentStream> {
        [&self.a1, &self.a2].into_iter().filter(move |s| s.kind == kind)
    }
}

/// Window length and stride, in frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub w: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { w: 40, stride: 1 }
    }
}
