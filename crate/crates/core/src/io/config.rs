//! Experiment configuration document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::sha256_hex;
use crate::analysis::SsimParams;
use crate::error::{Error, Result};
use crate::sim::AcquisitionConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    /// Square slice size in pixels.
    pub matrix: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            matrix: 128,
            n_train: 150,
            n_val: 5,
            n_test: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl CohortConfig {
    /// Case ids are assigned consecutively: training, then validation, then test.
    pub fn ids(&self, split: Split) -> std::ops::Range<u64> {
        let (a, b, c) = (self.n_train as u64, self.n_val as u64, self.n_test as u64);
        match split {
            Split::Train => 0..a,
            Split::Val => a..a + b,
            Split::Test => a + b..a + b + c,
        }
    }

    pub fn all_ids(&self) -> std::ops::Range<u64> {
        0..(self.n_train + self.n_val + self.n_test) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub ssim: SsimParams,
    /// Row of the test images used for intensity profiles; `None` is the centre row.
    pub profile_row: Option<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            ssim: SsimParams::default(),
            profile_row: None,
        }
    }
}

/// Everything a run depends on. Unknown keys are rejected and missing ones
/// take their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root seed; overrides `acquisition.seed` and `train.seed` on resolve.
    pub seed: u64,
    pub cohort: CohortConfig,
    pub acquisition: AcquisitionConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            cohort: CohortConfig::default(),
            acquisition: AcquisitionConfig::default(),
            train: TrainConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Apply a seed override and propagate the root seed.
    pub fn resolve(mut self, seed_override: Option<u64>) -> Result<Self> {
        if let Some(s) = seed_override {
            self.seed = s;
        }
        self.acquisition.seed = self.seed;
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.acquisition.validate()?;
        self.train.validate()?;
        let c = &self.cohort;
        if c.matrix < 16 {
            return Err(Error::Config("cohort.matrix must be >= 16".into()));
        }
        if c.n_train == 0 || c.n_val == 0 || c.n_test == 0 {
            return Err(Error::Config("cohort needs at least one train, val and test case".into()));
        }
        if self.train.patch_size > c.matrix {
            return Err(Error::Config(format!(
                "train.patch_size {} exceeds cohort.matrix {}",
                self.train.patch_size, c.matrix
            )));
        }
        if self.analysis.ssim.window > c.matrix {
            return Err(Error::Config("analysis.ssim.window exceeds the image size".into()));
        }
        if self.analysis.profile_row.is_some_and(|r| r >= c.matrix) {
            return Err(Error::Config("analysis.profile_row is outside the image".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Identifier of the data and training settings that determine a model.
    pub fn model_hash(&self, train: &TrainConfig) -> Result<String> {
        let key = serde_json::to_vec(&(self.seed, &self.cohort, &self.acquisition, train))?;
        Ok(sha256_hex(&key)[..16].to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_unknown_keys_fail() {
        let c = ExperimentConfig::default().resolve(Some(4)).unwrap();
        assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
        assert_eq!(c.train.seed, 4);
        assert!(ExperimentConfig::from_json(r#"{"seeed": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"train": {"depht": 3}}"#).is_err());
        let partial = ExperimentConfig::from_json(r#"{"cohort": {"matrix": 32}}"#).unwrap();
        assert_eq!(partial.cohort.n_train, 150);
    }

    #[test]
    fn split_ids_are_disjoint() {
        let c = CohortConfig { n_train: 3, n_val: 2, n_test: 4, matrix: 32 };
        assert_eq!(c.ids(Split::Val), 3..5);
        assert_eq!(c.ids(Split::Test), 5..9);
        assert_eq!(c.all_ids(), 0..9);
    }

    #[test]
    fn hash_tracks_training_settings() {
        let c = ExperimentConfig::default();
        let h = c.model_hash(&c.train).unwrap();
        assert_eq!(h.len(), 16);
        let other = TrainConfig { guided: false, ..c.train };
        assert_ne!(h, c.model_hash(&other).unwrap());
    }
}
