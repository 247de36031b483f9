//! Toy few-shot class-incremental learning on synthetic clusters.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod model;
pub mod optim;
pub mod plan;
pub mod train;

pub use ablation::{run_ablation, run_arm, AblationResult, Arm, ArmRun, ArmSummary, RunOptions, SessionRecord, Snapshot};
pub use config::{AblationConfig, DataConfig, FscilConfig};
pub use data::{generate_dataset, Sample, SyntheticDataset};
pub use model::{Backbone, Classifier, FscilModel, LearnableClassifier, Memory, ModelShape, Projection};
pub use plan::SessionPlan;
pub use train::{
    build_memory, evaluate, feature_dump, train_base, train_incremental, ClassifierMode, FeatureKind,
    IncrementalLog, SessionAccuracy, TrainConfig,
};
