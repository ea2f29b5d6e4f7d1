//! Training configuration file.
//!
//! TOML with five optional sections; every key is optional and unknown keys
//! are rejected:
//!
//! ```toml
//! [model]
//! topics = 50
//! hidden = 200
//!
//! [train]
//! epochs = 100
//! max_steps = 2000        # overrides epochs
//! batch_size = 200
//! learning_rate = 0.001
//! seed = 0
//!
//! [regulariser]
//! gamma = 300.0           # 0 disables the regulariser
//! top_words = 20
//!
//! [sinkhorn]
//! lambda = 100.0
//! max_iters = 5000
//! stop_threshold = 0.005
//!
//! [augment]
//! kind = "HighestToSimilar"
//! beta = 0.5
//! neighbor_pool = 20
//! ```
//!
//! Values resolve as command-line flags, then file, then defaults.

use std::path::Path;

use anyhow::{Context, Result};
use greg_core::augment::AugmentKind;
use greg_core::ntm::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub regulariser: RegulariserSection,
    #[serde(default)]
    pub sinkhorn: SinkhornSection,
    #[serde(default)]
    pub augment: AugmentSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub topics: Option<usize>,
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub max_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulariserSection {
    pub gamma: Option<f64>,
    pub top_words: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornSection {
    pub lambda: Option<f64>,
    pub max_iters: Option<usize>,
    pub stop_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub kind: Option<String>,
    pub beta: Option<f64>,
    pub neighbor_pool: Option<usize>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", e.message().trim()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    /// Writes every set value of `self` over `cfg`.
    pub fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        fn set<T: Copy>(slot: &mut T, v: Option<T>) {
            if let Some(v) = v {
                *slot = v;
            }
        }
        set(&mut cfg.num_topics, self.model.topics);
        set(&mut cfg.hidden, self.model.hidden);
        set(&mut cfg.epochs, self.train.epochs);
        if self.train.max_steps.is_some() {
            cfg.max_steps = self.train.max_steps;
        }
        set(&mut cfg.batch_size, self.train.batch_size);
        set(&mut cfg.learning_rate, self.train.learning_rate);
        set(&mut cfg.seed, self.train.seed);
        set(&mut cfg.gamma, self.regulariser.gamma);
        set(&mut cfg.top_words, self.regulariser.top_words);
        set(&mut cfg.sinkhorn.lambda, self.sinkhorn.lambda);
        set(&mut cfg.sinkhorn.max_iters, self.sinkhorn.max_iters);
        set(&mut cfg.sinkhorn.stop_threshold, self.sinkhorn.stop_threshold);
        if let Some(kind) = &self.augment.kind {
            cfg.augment.kind = kind.parse::<AugmentKind>()?;
        }
        set(&mut cfg.augment.beta, self.augment.beta);
        set(&mut cfg.augment.top_words, self.augment.neighbor_pool);
        Ok(())
    }
}

/// Defaults, then `file`, then `flags`.
pub fn resolve(file: Option<&ConfigFile>, flags: &ConfigFile) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(f) = file {
        f.apply(&mut cfg)?;
    }
    flags.apply(&mut cfg)?;
    cfg.augment.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = resolve(Some(&ConfigFile::parse("").unwrap()), &ConfigFile::default()).unwrap();
        assert_eq!(cfg.gamma, 300.0);
        assert_eq!(cfg.augment.beta, 0.5);
        assert_eq!(cfg.augment.kind, AugmentKind::HighestToSimilar);
        assert_eq!(cfg.augment.top_words, 20);
        assert_eq!(cfg.sinkhorn.lambda, 100.0);
        assert_eq!(cfg.sinkhorn.max_iters, 5000);
        assert_eq!(cfg.sinkhorn.stop_threshold, 0.005);
        assert_eq!(cfg.top_words, 20);
    }

    #[test]
    fn flags_beat_file() {
        let file = ConfigFile::parse("[regulariser]\ngamma = 100.0\n[model]\ntopics = 7\n").unwrap();
        let mut flags = ConfigFile::default();
        flags.regulariser.gamma = Some(50.0);
        let cfg = resolve(Some(&file), &flags).unwrap();
        assert_eq!(cfg.gamma, 50.0);
        assert_eq!(cfg.num_topics, 7);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ConfigFile::parse("[regulariser]\ngama = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
        let err = ConfigFile::parse("gama = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
    }

    #[test]
    fn bad_augmentation_name_is_rejected() {
        let file = ConfigFile::parse("[augment]\nkind = \"sideways\"\n").unwrap();
        assert!(resolve(Some(&file), &ConfigFile::default()).is_err());
    }
}
