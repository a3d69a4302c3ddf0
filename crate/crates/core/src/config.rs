use crate::dynhead::HeadConfig;
use crate::error::Result;
use crate::featnet::FeatNetConfig;
use crate::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Top-level run configuration. Unknown keys are rejected; defaults follow
/// the reference hyperparameters (embedding dim 100, window k 15, bootstrap
/// fraction 0.15, lr 0.0007, momentum 0.9, batch of 3 videos, crop 464,
/// 1024 subsampled reference pixels).
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub featnet: FeatNetConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
    /// Weight initialization seed.
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.featnet.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(back.featnet.embedding_dim, 100);
        assert_eq!(back.train.window_k, 15);
        assert_eq!(back.train.batch_videos, 3);
        assert!((back.train.lr - 0.0007).abs() < 1e-12);
        assert!((back.train.loss.bootstrap_fraction - 0.15).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<RunConfig>(r#"{"train": {"steps": 5, "bogus": 1}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"train": {"crop": 64}}"#).unwrap();
        assert_eq!(cfg.train.crop, 64);
        assert_eq!(cfg.train.window_k, 15);
    }

    #[test]
    fn load_propagates_validation_errors() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, r#"{{"train": {{"crop": 63}}}}"#).unwrap();
        assert!(RunConfig::load(f.path()).is_err());
    }
}
