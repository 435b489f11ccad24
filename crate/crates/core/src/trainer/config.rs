use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainError;
use crate::autodiff::AdamConfig;
use crate::losses::LossWeights;
use crate::models::ArchConfig;

/// Everything one training run needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub weights: LossWeights,
    pub lr: f64,
    pub batch_overlap: usize,
    pub batch_non: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub arch: ArchConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            lr: 1e-3,
            batch_overlap: 256,
            batch_non: 512,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            arch: ArchConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.weights.validate()?;
        self.arch.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_overlap < 2 || self.batch_non < 2 {
            return Err(TrainError::Config("batch sizes must be at least 2".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, TrainError> {
        toml::from_str(s).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short stable digest of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::CmeVariant;

    #[test]
    fn toml_round_trip_and_partial() {
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let p = TrainConfig::from_toml_str("alpha = 0.3\ncme = \"cme\"\nlr = 5e-4\n").unwrap();
        assert_eq!(p.weights.alpha, 0.3);
        assert_eq!(p.weights.cme, CmeVariant::Cme);
        assert_eq!(p.lr, 5e-4);
        assert_eq!(p.patience, 3);
        assert_eq!(p.weights.tau, 0.2);
        assert_eq!(p.weights.beta, 1.0);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_ne!(bad.hash(), TrainConfig::default().hash());
    }
}
