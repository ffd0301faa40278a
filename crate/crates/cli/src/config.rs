//! Flat `key=value` experiment configuration.
//!
//! ```text
//! # comments start with '#'
//! env = riskworld
//! seeds = 0,1,2,3,4
//! model.hidden = 400,400,400,400
//! rollout.k = 20
//! learner.eta = 0.7
//! ```

use std::path::{Path, PathBuf};

use cabi_core::augment::{CheckMode, RolloutConfig, Strategy};
use cabi_core::cvae::CvaeConfig;
use cabi_core::dynamics::ModelConfig;
use cabi_core::learner::LearnerConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {msg}")]
    Line { path: String, line: usize, msg: String },
    #[error("cannot read config {0}: {1}")]
    Read(String, std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: String,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub collect_steps: usize,
    pub model: ModelConfig,
    pub cvae: CvaeConfig,
    pub rollout: RolloutConfig,
    pub strategy: Strategy,
    pub learner: LearnerConfig,
    pub eval_episodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "riskworld".into(),
            seeds: vec![0, 1, 2, 3, 4],
            out: PathBuf::from("runs"),
            collect_steps: 10_000,
            model: ModelConfig::default(),
            cvae: CvaeConfig::default(),
            rollout: RolloutConfig::default(),
            strategy: Strategy::Cabi,
            learner: LearnerConfig::default(),
            eval_episodes: 10,
        }
    }
}

fn list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| format!("bad list element {s:?}")))
        .collect()
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse::<T>().map_err(|_| format!("bad value {v:?}"))
}

fn flag(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("bad boolean {v:?}")),
    }
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "env" => self.env = value.to_string(),
            "seeds" => self.seeds = list(value)?,
            "out" => self.out = PathBuf::from(value),
            "collect.steps" => self.collect_steps = num(value)?,
            "strategy" => self.strategy = value.parse().map_err(|e| format!("{e}"))?,
            "eval.episodes" => self.eval_episodes = num(value)?,

            "model.hidden" => self.model.hidden = list(value)?,
            "model.members" => self.model.members = num(value)?,
            "model.elites" => self.model.elites = num(value)?,
            "model.epochs" => self.model.epochs = num(value)?,
            "model.batch_size" => self.model.batch_size = num(value)?,
            "model.lr" => self.model.lr = num(value)?,
            "model.holdout" => self.model.holdout = num(value)?,
            "model.normalize" => self.model.normalize = flag(value)?,

            "cvae.hidden" => self.cvae.hidden = list(value)?,
            "cvae.latent_dim" => self.cvae.latent_dim = Some(num(value)?),
            "cvae.epochs" => self.cvae.epochs = num(value)?,
            "cvae.batch_size" => self.cvae.batch_size = num(value)?,
            "cvae.lr" => self.cvae.lr = num(value)?,
            "cvae.kl_weight" => self.cvae.kl_weight = num(value)?,

            "rollout.fwd_horizon" => self.rollout.fwd_horizon = num(value)?,
            "rollout.bwd_horizon" => self.rollout.bwd_horizon = num(value)?,
            "rollout.k" => self.rollout.k = num(value)?,
            "rollout.batch_size" => self.rollout.batch_size = num(value)?,
            "rollout.total" => self.rollout.total = num(value)?,
            "rollout.check" => {
                self.rollout.check = match value {
                    "elite-mean" => CheckMode::EliteMean,
                    "sample" => CheckMode::Sample,
                    _ => return Err(format!("bad check mode {value:?}")),
                }
            }

            "learner.gamma" => self.learner.gamma = num(value)?,
            "learner.tau" => self.learner.tau = num(value)?,
            "learner.policy_noise" => self.learner.policy_noise = num(value)?,
            "learner.noise_clip" => self.learner.noise_clip = num(value)?,
            "learner.policy_delay" => self.learner.policy_delay = num(value)?,
            "learner.alpha" => self.learner.alpha = num(value)?,
            "learner.steps" => self.learner.steps = num(value)?,
            "learner.batch_size" => self.learner.batch_size = num(value)?,
            "learner.eta" => self.learner.eta = num(value)?,
            "learner.hidden" => self.learner.hidden = list(value)?,
            "learner.actor_lr" => self.learner.actor_lr = num(value)?,
            "learner.critic_lr" => self.learner.critic_lr = num(value)?,
            "learner.normalize_states" => self.learner.normalize_states = flag(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Line {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
            cfg.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let cfg = ExperimentConfig::parse(
            "# toy\nseeds = 3, 4\nmodel.hidden=32,32 # narrow\nrollout.k=50\nlearner.eta=0.9\nstrategy=bomi\n",
            "inline",
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.model.hidden, vec![32, 32]);
        assert_eq!(cfg.rollout.k, 50.0);
        assert_eq!(cfg.learner.eta, 0.9);
        assert_eq!(cfg.strategy, Strategy::Bomi);
        assert_eq!(cfg.model.epochs, 100);
    }

    #[test]
    fn errors_name_the_line() {
        let e = ExperimentConfig::parse("env=riskworld\nmodel.width=3\n", "x.cfg").unwrap_err();
        assert!(e.to_string().starts_with("x.cfg:2:"), "{e}");
        assert!(ExperimentConfig::parse("rollout.k=abc", "x").is_err());
        assert!(ExperimentConfig::parse("just words", "x").is_err());
    }
}
