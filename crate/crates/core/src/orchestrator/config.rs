use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::LearnerConfig;
use crate::error::{Error, Result};
use crate::hierarchy::DownstreamConfig;
use crate::replay::ReplayConfig;
use crate::worldmodel::WorldModelConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// All roles on one thread in a fixed per-episode schedule.
    #[default]
    Deterministic,
    /// Actor, model learner and policy learner on separate threads.
    Parallel,
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(Self::Deterministic),
            "parallel" => Ok(Self::Parallel),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// The `[run]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub env: String,
    pub run_id: String,
    pub total_episodes: usize,
    /// Transitions per stored trajectory chunk.
    pub trajectory_len: usize,
    /// Trajectories per model-replay batch.
    pub batch_size: usize,
    pub snapshot_every: usize,
    /// Minimum model-replay size before the first model update.
    pub warmup: usize,
    pub model_updates_per_episode: usize,
    pub policy_updates_per_episode: usize,
    pub mode: RunMode,
    pub seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            env: "pointmass".into(),
            run_id: "run".into(),
            total_episodes: 5000,
            trajectory_len: 50,
            batch_size: 64,
            snapshot_every: 100,
            warmup: 64,
            model_updates_per_episode: 4,
            policy_updates_per_episode: 4,
            mode: RunMode::Deterministic,
            seed: 0,
        }
    }
}

/// Every tunable of a curiosity run and of downstream reuse, one TOML section
/// per subsystem. Unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSettings,
    pub model_replay: ReplayConfig,
    pub policy_replay: ReplayConfig,
    pub worldmodel: WorldModelConfig,
    pub learner: LearnerConfig,
    pub downstream: DownstreamConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.trajectory_len == 0
            || r.batch_size == 0
            || r.snapshot_every == 0
            || r.model_updates_per_episode == 0
            || r.policy_updates_per_episode == 0
        {
            return Err(Error::Config(
                "run: trajectory_len, batch_size, snapshot_every and per-episode update counts must be >= 1"
                    .into(),
            ));
        }
        crate::envs::make_env(&r.env)?;
        self.model_replay.validate()?;
        self.policy_replay.validate()?;
        self.worldmodel.validate()?;
        self.learner.validate()?;
        self.downstream.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.run.trajectory_len, 50);
        assert_eq!(c.run.batch_size, 64);
        assert_eq!(c.run.snapshot_every, 100);
        assert_eq!((c.model_replay.capacity, c.model_replay.max_samples), (50_000, 32));
        assert_eq!((c.policy_replay.capacity, c.policy_replay.max_samples), (50_000, 32));
        assert_eq!(c.worldmodel.lr, 3e-4);
        assert_eq!(c.worldmodel.reward_scale, 10.0);
        assert_eq!(c.worldmodel.hidden, vec![256, 256]);
        assert_eq!(c.learner.lr, 3e-4);
        assert_eq!(c.learner.critic_hidden, vec![512, 512]);
        assert_eq!(c.learner.policy_linear, vec![128]);
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml_str(
            "[run]\ntotal_episodes = 10\nsnapshot_every = 5\n[worldmodel]\nhidden = [8]\n",
        )
        .unwrap();
        assert_eq!(c.run.total_episodes, 10);
        assert_eq!(c.worldmodel.hidden, vec![8]);
        assert_eq!(c.learner.batch_size, 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("[run]\ntotal_episods = 10\n").is_err());
        assert!(RunConfig::from_toml_str("[runn]\n").is_err());
        assert!(RunConfig::from_toml_str("[learner]\nbeta = 1.0\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("[run]\nenv = \"jaco\"\n").is_err());
        assert!(RunConfig::from_toml_str("[model_replay]\ncapacity = 0\n").is_err());
        assert!(RunConfig::from_toml_str("[run]\nmode = \"async\"\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.run.seed = 17;
        c.learner.policy_hidden = vec![3, 4];
        c.run.mode = RunMode::Parallel;
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }
}
