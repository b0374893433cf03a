//! Experiment configuration files (TOML).
//!
//! ```toml
//! experiment = "ball"      # or "box"
//! seed = 1
//! replicates = [1, 2, 3]   # seeds used by `repro`
//! [ball]                   # simulator, see `BallConfig`
//! [box]                    # simulator, see `BoxConfig`
//! [learn]                  # learner, see `LearnConfig`
//! [filter]                 # particle filter, see `FilterConfig`
//! [eval]                   # metrics, see `EvalConfig`
//! ```
//!
//! Every table is optional and every key falls back to its default. Unknown
//! keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learner::LearnConfig;
use crate::metrics::EvalConfig;
use crate::sims::{BallConfig, BoxConfig};
use crate::tracking::FilterConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Ball,
    Box,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Ball => "ball",
            Experiment::Box => "box",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub replicates: Vec<u64>,
    #[serde(default)]
    pub ball: BallConfig,
    #[serde(default, rename = "box")]
    pub boxes: BoxConfig,
    #[serde(default)]
    pub learn: LearnConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_seed() -> u64 {
    1
}

/// Shipped defaults, identical to `configs/ball.toml` and `configs/box.toml`.
pub const BALL_TOML: &str = include_str!("../configs/ball.toml");
pub const BOX_TOML: &str = include_str!("../configs/box.toml");

impl ExperimentConfig {
    /// Parse TOML text. Errors carry the 1-based line of the offending key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            let msg = e.message().trim().to_string();
            match line {
                Some(l) => Error::config(format!("line {l}: {msg}")),
                None => Error::config(msg),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Built-in default for an experiment.
    pub fn builtin(exp: Experiment) -> Self {
        let text = match exp {
            Experiment::Ball => BALL_TOML,
            Experiment::Box => BOX_TOML,
        };
        Self::from_toml(text).expect("shipped config parses")
    }

    pub fn validate(&self) -> Result<()> {
        match self.experiment {
            Experiment::Ball => self.ball.validate()?,
            Experiment::Box => self.boxes.validate()?,
        }
        self.learn.validate()?;
        self.filter.validate()?;
        if self.eval.n_max == 0 {
            return Err(Error::config("eval.n_max must be >= 1"));
        }
        Ok(())
    }

    /// Seeds used by `repro`: `replicates`, or `[seed]` when empty.
    pub fn replicate_seeds(&self) -> Vec<u64> {
        if self.replicates.is_empty() {
            vec![self.seed]
        } else {
            self.replicates.clone()
        }
    }

    /// Hex SHA-256 of the canonical JSON form; independent of comments and
    /// key order in the source file.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Train/test split sizes of the configured simulator.
    pub fn split_sizes(&self) -> (usize, usize) {
        match self.experiment {
            Experiment::Ball => (self.ball.train, self.ball.test),
            Experiment::Box => (self.boxes.train, self.boxes.test),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_parse() {
        let b = ExperimentConfig::builtin(Experiment::Ball);
        assert_eq!(b.experiment, Experiment::Ball);
        assert_eq!(b.ball, BallConfig::default());
        let x = ExperimentConfig::builtin(Experiment::Box);
        assert_eq!(x.boxes, BoxConfig::default());
        assert_eq!(x.split_sizes(), (30, 6));
    }

    #[test]
    fn error_names_the_line() {
        let text = "experiment = \"ball\"\nseed = 3\n[ball]\ndt = \"fast\"\n";
        let e = ExperimentConfig::from_toml(text).unwrap_err().to_string();
        assert!(e.contains("line 4"), "{e}");
        let text = "experiment = \"ball\"\n\n[learn]\nbogus = 1\n";
        let e = ExperimentConfig::from_toml(text).unwrap_err().to_string();
        assert!(e.contains("line 4"), "{e}");
    }

    #[test]
    fn invalid_values_rejected() {
        let text = "experiment = \"ball\"\n[filter]\nparticles = 0\n";
        assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = ExperimentConfig::from_toml("experiment = \"box\"\nseed = 2\n").unwrap();
        let b = ExperimentConfig::from_toml("# c\nseed = 2\n\nexperiment = \"box\"\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::from_toml("experiment = \"box\"\nseed = 3\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
