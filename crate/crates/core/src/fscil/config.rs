//! Experiment configuration: one JSON document with every field defaulted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ablation::{Arm, RunOptions};
use super::data::{generate_dataset, SyntheticDataset};
use super::model::ModelShape;
use super::plan::SessionPlan;
use super::train::{FeatureKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub r_mean: f64,
    pub sigma_noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            r_mean: 6.0,
            sigma_noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub arms: Vec<Arm>,
    /// Each seed drives data, initialization and shuffling of one ablation round.
    pub seeds: Vec<u64>,
    /// Representation written to feature dumps.
    pub features: FeatureKind,
}

impl AblationConfig {
    pub fn run_options(&self, keep_snapshots: bool) -> RunOptions {
        RunOptions {
            features: self.features,
            keep_snapshots,
        }
    }
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            arms: Arm::ALL.to_vec(),
            seeds: (0..5).collect(),
            features: FeatureKind::Normalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FscilConfig {
    pub plan: SessionPlan,
    pub data: DataConfig,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
}

impl FscilConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if !(self.data.r_mean > 0.0) || !(self.data.sigma_noise >= 0.0) {
            return Err(Error::InvalidConfig("r_mean must be positive and sigma_noise non-negative".into()));
        }
        let shape = self.model;
        if [shape.hidden, shape.feature_mid, shape.hidden_g, shape.dim].contains(&0) {
            return Err(Error::InvalidConfig("model widths must be positive".into()));
        }
        if self.ablation.arms.is_empty() || self.ablation.seeds.is_empty() {
            return Err(Error::InvalidConfig("ablation needs at least one arm and one seed".into()));
        }
        self.train.loss_kind()?;
        for arm in &self.ablation.arms {
            arm.configure(&self.train).validate()?;
        }
        Ok(())
    }

    /// Replaces every seed with `seed`, leaving a single ablation round.
    pub fn override_seed(&mut self, seed: u64) {
        self.plan.seed = seed;
        self.train.seed = seed;
        self.ablation.seeds = vec![seed];
    }

    /// Plan and training config for one ablation round.
    pub fn for_seed(&self, seed: u64) -> (SessionPlan, TrainConfig) {
        let mut plan = self.plan;
        plan.seed = seed;
        let mut train = self.train.clone();
        train.seed = seed;
        (plan, train)
    }

    pub fn dataset<T: Scalar>(&self, seed: u64) -> Result<SyntheticDataset<T>> {
        let (plan, _) = self.for_seed(seed);
        generate_dataset(&plan, self.data.r_mean, self.data.sigma_noise)
    }
}
