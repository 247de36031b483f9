//! Experiment configuration files.

use std::path::Path;

use ncfscil::fscil::FscilConfig;
use ncfscil::layer_peeled::{LayerPeeledProblem, SessionSpec};
use ncfscil::losses::LossKind;
use ncfscil::nc_metrics::{Scope, Split};
use ncfscil::{etf, Error, Result};
use serde::{Deserialize, Serialize};

/// Schema version this binary reads and writes.
pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EtfSection {
    /// `(dim, classes)` pairs certified by `repro full`.
    pub cases: Vec<(usize, usize)>,
    pub seeds: Vec<u64>,
    pub tol: f64,
}

impl Default for EtfSection {
    fn default() -> Self {
        Self {
            cases: vec![(4, 4), (16, 10), (64, 60), (128, 100)],
            seeds: vec![0, 1, 2],
            tol: 1e-9,
        }
    }
}

/// A layer-peeled problem and its solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpConfig {
    pub dim: usize,
    /// Samples per class, one list per session.
    pub sessions: Vec<Vec<usize>>,
    /// `"dr"` or `"ce"`.
    pub loss: String,
    pub ce_scale: f64,
    pub steps: usize,
    pub lr: f64,
    /// Seeds both the prototypes and the feature initialization.
    pub seed: u64,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            sessions: vec![vec![1, 3, 8, 2, 5, 4], vec![7, 1], vec![2, 6]],
            loss: "dr".into(),
            ce_scale: 1.0,
            steps: 5000,
            lr: 1e4,
            seed: 0,
        }
    }
}

impl LpConfig {
    /// Defaults for the cross-entropy certification run.
    pub fn cross_entropy() -> Self {
        Self {
            loss: "ce".into(),
            steps: 50_000,
            lr: 1.0,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn problem(&self) -> Result<LayerPeeledProblem<f64>> {
        let classes: usize = self.sessions.iter().map(Vec::len).sum();
        let protos = etf::make_etf(self.dim, classes, self.seed)?;
        let sessions = self
            .sessions
            .iter()
            .map(|s| SessionSpec {
                samples_per_class: s.clone(),
            })
            .collect();
        LayerPeeledProblem::new(sessions, protos, LossKind::from_name(&self.loss, self.ce_scale)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayerPeeledSection {
    pub dr: LpConfig,
    pub ce: LpConfig,
}

impl Default for LayerPeeledSection {
    fn default() -> Self {
        Self {
            dr: LpConfig::default(),
            ce: LpConfig::cross_entropy(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub scopes: Vec<Scope>,
    pub splits: Vec<Split>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            scopes: vec![Scope::PerSession, Scope::Accumulate, Scope::BaseOnly],
            splits: vec![Split::Train, Split::Test],
        }
    }
}

/// Top-level document read by `repro full --config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub version: String,
    pub etf: EtfSection,
    pub layer_peeled: LayerPeeledSection,
    pub fscil: FscilConfig,
    pub metrics: MetricsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: SCHEMA_VERSION.into(),
            etf: EtfSection::default(),
            layer_peeled: LayerPeeledSection::default(),
            fscil: FscilConfig::default(),
            metrics: MetricsSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(s)?;
        if config.version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config version {:?} is not supported (expected {SCHEMA_VERSION:?})",
                config.version
            )));
        }
        config.fscil.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn override_seed(&mut self, seed: u64) {
        self.etf.seeds = vec![seed];
        self.layer_peeled.dr.seed = seed;
        self.layer_peeled.ce.seed = seed;
        self.fscil.override_seed(seed);
    }
}
