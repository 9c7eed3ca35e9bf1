//! Pipeline configuration file: TOML, validated field by field.

use std::path::{Path, PathBuf};

use interact_core::baselines::GaussianBaselineConfig;
use interact_core::data::{Action, SynthConfig};
use interact_core::dynamics::DynamicsConfig;
use interact_core::embedding::EmbeddingConfig;
use interact_core::eval::BenchmarkConfig;
use interact_core::generation::RolloutOptions;
use interact_core::robot_map::RobotMapConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    /// Directory served for plain HTTP requests.
    pub static_dir: PathBuf,
    pub rollout: RolloutOptions,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8765,
            static_dir: PathBuf::from("ui"),
            rollout: RolloutOptions::default(),
        }
    }
}

/// Everything a pipeline run needs. Stage seeds are derived from `seed`;
/// seeds written inside the stage tables are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Artifact root; relative paths resolve against the working directory.
    pub root: PathBuf,
    pub actions: Vec<Action>,
    pub test_fraction: f64,
    pub synth: SynthConfig,
    pub human_embedding: EmbeddingConfig,
    pub robot_embedding: EmbeddingConfig,
    pub dynamics: DynamicsConfig,
    pub robot_map: RobotMapConfig,
    pub baselines: GaussianBaselineConfig,
    pub benchmark: BenchmarkConfig,
    pub serve: ServeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            root: PathBuf::from("artifacts"),
            actions: Action::ALL.to_vec(),
            test_fraction: 0.2,
            synth: SynthConfig::default(),
            human_embedding: EmbeddingConfig::default(),
            robot_embedding: EmbeddingConfig::default(),
            dynamics: DynamicsConfig::default(),
            robot_map: RobotMapConfig::default(),
            baselines: GaussianBaselineConfig::default(),
            benchmark: BenchmarkConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner().message()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies the seed override and derives every stage seed, then
    /// validates.
    pub fn effective(mut self, seed: Option<u64>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        let s = self.seed;
        self.synth.seed = s;
        self.human_embedding.seed = s.wrapping_add(1);
        self.dynamics.seed = s.wrapping_add(2);
        self.robot_embedding.seed = s.wrapping_add(3);
        self.robot_map.seed = s.wrapping_add(4);
        self.synth = self.synth.restrict(&self.actions);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.actions.is_empty() {
            return Err(invalid("actions", "at least one action is required"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(invalid("test_fraction", "must lie strictly between 0 and 1"));
        }
        self.synth.validate().map_err(|e| invalid("synth", e))?;
        self.human_embedding.validate().map_err(|e| invalid("human_embedding", e))?;
        self.robot_embedding.validate().map_err(|e| invalid("robot_embedding", e))?;
        self.dynamics.validate().map_err(|e| invalid("dynamics", e))?;
        self.robot_map.validate().map_err(|e| invalid("robot_map", e))?;
        if self.robot_embedding.window.w != self.human_embedding.window.w {
            return Err(invalid("robot_embedding.window.w", "must equal human_embedding.window.w"));
        }
        if self.baselines.ridge_rel < 0.0 {
            return Err(invalid("baselines.ridge_rel", "must be non-negative"));
        }
        let b = &self.benchmark;
        if b.observe == 0 || b.predict == 0 || b.stride == 0 {
            return Err(invalid("benchmark", "observe, predict and stride must be positive"));
        }
        if b.refresh_every == 0 || b.refresh_every > self.human_embedding.window.w {
            return Err(invalid("benchmark.refresh_every", "must be in 1..=window"));
        }
        let r = self.serve.rollout.refresh_every;
        if r == 0 || r > self.human_embedding.window.w {
            return Err(invalid("serve.rollout.refresh_every", "must be in 1..=window"));
        }
        Ok(())
    }

    /// SHA-256 over the settings that shape data and trained models.
    pub fn hash(&self) -> String {
        let relevant = serde_json::json!({
            "seed": self.seed,
            "actions": self.actions,
            "test_fraction": self.test_fraction,
            "synth": self.synth,
            "human_embedding": self.human_embedding,
            "robot_embedding": self.robot_embedding,
            "dynamics": self.dynamics,
            "robot_map": self.robot_map,
            "baselines": self.baselines,
        });
        hex_digest(relevant.to_string().as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
