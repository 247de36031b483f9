//! The three-arm classifier/loss ablation and its per-session diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etf::make_etf;
use crate::linalg::Matrix;
use crate::nc_metrics::{self, FeatureDump, MetricsReport, Scope, Split};
use crate::rng::{self, streams};
use crate::scalar::Scalar;

use super::data::SyntheticDataset;
use super::model::{Classifier, FscilModel, LearnableClassifier, ModelShape};
use super::train::{self, ClassifierMode, FeatureKind, SessionAccuracy, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    LearnableCe,
    EtfCe,
    EtfDr,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::LearnableCe, Arm::EtfCe, Arm::EtfDr];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::LearnableCe => "learnable_ce",
            Arm::EtfCe => "etf_ce",
            Arm::EtfDr => "etf_dr",
        }
    }

    /// The base config with this arm's classifier and loss.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut config = base.clone();
        let (mode, loss) = match self {
            Arm::LearnableCe => (ClassifierMode::Learnable, "ce"),
            Arm::EtfCe => (ClassifierMode::Etf, "ce"),
            Arm::EtfDr => (ClassifierMode::Etf, "dr"),
        };
        config.classifier_mode = mode;
        config.loss = loss.into();
        config
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown arm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session: usize,
    pub accuracy: SessionAccuracy,
    /// Last epoch-mean loss (base) or last batch loss (incremental).
    pub loss_final: f64,
}

/// Model and features captured at the end of a session.
#[derive(Debug, Clone)]
pub struct Snapshot<T> {
    pub model: FscilModel<T>,
    pub features: FeatureDump<T>,
}

#[derive(Debug, Clone)]
pub struct ArmRun<T> {
    pub arm: Arm,
    pub sessions: Vec<SessionRecord>,
    pub base_loss_curve: Vec<f64>,
    /// Six panels (scope × split) per session, in session-major order.
    pub metrics: Vec<MetricsReport>,
    pub snapshots: Vec<Snapshot<T>>,
}

impl<T> ArmRun<T> {
    pub fn final_accuracy(&self) -> f64 {
        self.sessions.last().map_or(f64::NAN, |s| s.accuracy.all)
    }

    pub fn average_accuracy(&self) -> f64 {
        let n = self.sessions.len() as f64;
        self.sessions.iter().map(|s| s.accuracy.all).sum::<f64>() / n
    }

    /// Performance drop: first-session minus last-session accuracy.
    pub fn performance_drop(&self) -> f64 {
        match (self.sessions.first(), self.sessions.last()) {
            (Some(a), Some(b)) => a.accuracy.all - b.accuracy.all,
            _ => f64::NAN,
        }
    }

    pub fn metric(&self, scope: Scope, split: Split, session: usize) -> Option<&MetricsReport> {
        self.metrics
            .iter()
            .find(|m| m.scope == scope && m.split == split && m.session == session)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub final_accuracy: f64,
    pub average_accuracy: f64,
    pub performance_drop: f64,
}

impl<T> From<&ArmRun<T>> for ArmSummary {
    fn from(run: &ArmRun<T>) -> Self {
        Self {
            arm: run.arm,
            final_accuracy: run.final_accuracy(),
            average_accuracy: run.average_accuracy(),
            performance_drop: run.performance_drop(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    /// Representation stored in snapshots; diagnostics always use `μ̂`.
    pub features: FeatureKind,
    /// Keep each session's model and feature dump in the result.
    pub keep_snapshots: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            features: FeatureKind::Normalized,
            keep_snapshots: false,
        }
    }
}

/// Builds the untrained model of an arm. The backbone and projection draw
/// from the same stream for every arm, so arms differ only in the head.
pub fn init_model<T: Scalar>(
    dataset: &SyntheticDataset<T>,
    shape: ModelShape,
    config: &TrainConfig,
) -> Result<FscilModel<T>> {
    let k = dataset.plan.total_classes();
    let classifier = match config.classifier_mode {
        ClassifierMode::Etf => Classifier::Etf(make_etf::<T>(shape.dim, k, config.seed)?),
        ClassifierMode::Learnable => {
            let mut r = rng::seeded(config.seed, streams::CLASSIFIER_INIT);
            Classifier::Learnable(LearnableClassifier::new(shape.dim, k, config.normalize_learnable, &mut r))
        }
    };
    let mut r = rng::seeded(config.seed, streams::MODEL_INIT);
    FscilModel::init(dataset.plan.input_dim, shape, classifier, &mut r)
}

fn session_metrics<T: Scalar>(dump: &FeatureDump<T>, protos: &Matrix<T>, t: usize) -> Result<Vec<MetricsReport>> {
    let mut out = Vec::with_capacity(6);
    for scope in [Scope::PerSession, Scope::Accumulate, Scope::BaseOnly] {
        for split in [Split::Train, Split::Test] {
            out.push(nc_metrics::report(dump, protos, scope, split, t)?);
        }
    }
    Ok(out)
}

/// Trains one arm through every session.
pub fn run_arm<T: Scalar>(
    dataset: &SyntheticDataset<T>,
    shape: ModelShape,
    base_config: &TrainConfig,
    arm: Arm,
    options: RunOptions,
) -> Result<ArmRun<T>> {
    let config = arm.configure(base_config);
    config.validate()?;
    let mut model = init_model(dataset, shape, &config)?;
    let mut run = ArmRun {
        arm,
        sessions: Vec::new(),
        base_loss_curve: Vec::new(),
        metrics: Vec::new(),
        snapshots: Vec::new(),
    };
    for t in 0..dataset.plan.num_sessions() {
        let loss_final = if t == 0 {
            run.base_loss_curve = train::train_base(&mut model, dataset, &config)?;
            run.base_loss_curve.last().copied().unwrap_or(f64::NAN)
        } else {
            train::build_memory(&mut model, dataset, t)?;
            let log = train::train_incremental(&mut model, dataset, t, &config)?;
            log.losses.last().copied().unwrap_or(f64::NAN)
        };
        let accuracy = train::evaluate(&model, dataset, t)?;
        run.sessions.push(SessionRecord {
            session: t,
            accuracy,
            loss_final,
        });
        let dump = train::feature_dump(&model, dataset, t, FeatureKind::Normalized)?;
        run.metrics.extend(session_metrics(&dump, model.classifier.prototypes(), t)?);
        if options.keep_snapshots {
            let features = match options.features {
                FeatureKind::Normalized => dump,
                FeatureKind::Intermediate => train::feature_dump(&model, dataset, t, options.features)?,
            };
            run.snapshots.push(Snapshot {
                model: model.clone(),
                features,
            });
        }
    }
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct AblationResult<T> {
    pub dataset_checksum: String,
    pub runs: Vec<ArmRun<T>>,
}

impl<T> AblationResult<T> {
    pub fn run(&self, arm: Arm) -> Option<&ArmRun<T>> {
        self.runs.iter().find(|r| r.arm == arm)
    }

    pub fn summaries(&self) -> Vec<ArmSummary> {
        self.runs.iter().map(ArmSummary::from).collect()
    }
}

/// Runs every requested arm on the same dataset and seeds.
pub fn run_ablation<T: Scalar>(
    dataset: &SyntheticDataset<T>,
    shape: ModelShape,
    base_config: &TrainConfig,
    arms: &[Arm],
    options: RunOptions,
) -> Result<AblationResult<T>> {
    let runs = arms
        .iter()
        .map(|&arm| run_arm(dataset, shape, base_config, arm, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationResult {
        dataset_checksum: dataset.checksum(),
        runs,
    })
}
