//! In-memory output trees and the CSV/JSON files written from them.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use ncfscil::etf::EtfPrototypes;
use ncfscil::fscil::{self, checkpoint, AblationResult, ArmRun, FscilConfig, Snapshot};
use ncfscil::layer_peeled::{self, OptimalityReport, TrajectoryPoint};
use ncfscil::nc_metrics::MetricsReport;
use ncfscil::serialize::{fmt_f64, to_json_string};
use ncfscil::{Error, Result};
use serde::Serialize;

use crate::config::LpConfig;

/// Files keyed by path relative to an output directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Artifacts {
    files: BTreeMap<PathBuf, Vec<u8>>,
}

impl Artifacts {
    pub fn insert(&mut self, path: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.insert(path.into(), bytes);
    }

    pub fn insert_text(&mut self, path: impl Into<PathBuf>, text: String) {
        self.insert(path, text.into_bytes());
    }

    /// Moves every file of `other` under `prefix`.
    pub fn nest(&mut self, prefix: &Path, other: Artifacts) {
        for (p, b) in other.files {
            self.files.insert(prefix.join(p), b);
        }
    }

    pub fn get(&self, path: &Path) -> Option<&[u8]> {
        self.files.get(path).map(Vec::as_slice)
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> + '_ {
        self.files.keys().map(PathBuf::as_path)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Writes every file below `dir`. Paths must stay inside it.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for (rel, bytes) in &self.files {
            if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
                return Err(Error::InvalidConfig(format!("refusing to write {}", rel.display())));
            }
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, bytes)?;
        }
        Ok(())
    }
}

pub fn sessions_csv<T>(runs: &[ArmRun<T>]) -> String {
    let mut out = String::from("session,arm,acc_all,acc_base,acc_novel_this_session,loss_final\n");
    for run in runs {
        for s in &run.sessions {
            out += &format!(
                "{},{},{},{},{},{}\n",
                s.session,
                run.arm.as_str(),
                fmt_f64(s.accuracy.all),
                fmt_f64(s.accuracy.base),
                fmt_f64(s.accuracy.novel),
                fmt_f64(s.loss_final)
            );
        }
    }
    out
}

pub fn summary_csv<T>(runs: &[ArmRun<T>]) -> String {
    let mut out = String::from("arm,final,average,pd\n");
    for run in runs {
        out += &format!(
            "{},{},{},{}\n",
            run.arm.as_str(),
            fmt_f64(run.final_accuracy()),
            fmt_f64(run.average_accuracy()),
            fmt_f64(run.performance_drop())
        );
    }
    out
}

pub fn metrics_csv<'a>(rows: impl IntoIterator<Item = &'a MetricsReport>) -> String {
    let mut out = format!("{}\n", MetricsReport::CSV_HEADER);
    for r in rows {
        out += &r.csv_row();
        out.push('\n');
    }
    out
}

fn arm_metrics_csv<T>(runs: &[ArmRun<T>]) -> String {
    let mut out = format!("arm,{}\n", MetricsReport::CSV_HEADER);
    for run in runs {
        for r in &run.metrics {
            out += &format!("{},{}\n", run.arm.as_str(), r.csv_row());
        }
    }
    out
}

fn snapshot_files(snap: &Snapshot<f64>) -> Artifacts {
    let mut a = Artifacts::default();
    a.insert("model.bin", checkpoint::to_bytes(&snap.model));
    a.insert("features.bin", snap.features.to_bytes());
    a
}

/// Final classifier columns in the prototype-file format.
pub fn classifier_json(run: &ArmRun<f64>, seed: u64) -> Result<String> {
    let snap = run
        .snapshots
        .last()
        .ok_or_else(|| Error::InvalidConfig("run kept no snapshots".into()))?;
    EtfPrototypes::from_matrix_unchecked(snap.model.classifier.prototypes().clone(), seed).to_json()
}

#[derive(Serialize)]
struct RunInfo<'a> {
    seed: u64,
    dataset_checksum: &'a str,
    config: &'a FscilConfig,
}

/// Outputs of one ablation round.
pub fn ablation_files(config: &FscilConfig, seed: u64, result: &AblationResult<f64>) -> Result<Artifacts> {
    let mut a = Artifacts::default();
    a.insert_text("sessions.csv", sessions_csv(&result.runs));
    a.insert_text("summary.csv", summary_csv(&result.runs));
    a.insert_text("metrics.csv", arm_metrics_csv(&result.runs));
    a.insert_text(
        "run.json",
        to_json_string(&RunInfo {
            seed,
            dataset_checksum: &result.dataset_checksum,
            config,
        })?,
    );
    for run in &result.runs {
        let arm = PathBuf::from(run.arm.as_str());
        a.insert_text(arm.join("prototypes.json"), classifier_json(run, seed)?);
        for (t, snap) in run.snapshots.iter().enumerate() {
            a.nest(&arm.join(format!("session_{t}")), snapshot_files(snap));
        }
    }
    Ok(a)
}

pub type SeedResult = (u64, AblationResult<f64>);

/// Runs the configured ablation for every seed; files go under `seed_<s>/`,
/// with a cross-seed `ablation.csv` at the root.
pub fn run_fscil(config: &FscilConfig) -> Result<(Artifacts, Vec<SeedResult>)> {
    config.validate()?;
    let mut out = Artifacts::default();
    let mut results = Vec::new();
    let mut table = String::from("seed,arm,final,average,pd\n");
    for &seed in &config.ablation.seeds {
        let dataset = config.dataset::<f64>(seed)?;
        let (_, train) = config.for_seed(seed);
        let result = fscil::run_ablation(
            &dataset,
            config.model,
            &train,
            &config.ablation.arms,
            config.ablation.run_options(true),
        )?;
        for s in result.summaries() {
            table += &format!(
                "{seed},{},{},{},{}\n",
                s.arm.as_str(),
                fmt_f64(s.final_accuracy),
                fmt_f64(s.average_accuracy),
                fmt_f64(s.performance_drop)
            );
        }
        out.nest(Path::new(&format!("seed_{seed}")), ablation_files(config, seed, &result)?);
        results.push((seed, result));
    }
    out.insert_text("ablation.csv", table);
    Ok((out, results))
}

#[derive(Debug, Clone, Serialize)]
pub struct LpReport {
    pub config: LpConfig,
    #[serde(flatten)]
    pub report: OptimalityReport,
    pub offclass_probability_spread: f64,
    pub trajectory: Vec<TrajectoryPoint>,
}

pub fn solve_lp(config: &LpConfig) -> Result<LpReport> {
    let problem = config.problem()?;
    let outcome = layer_peeled::solve_incremental_traced(&problem, config.steps, config.lr, config.seed)?;
    Ok(LpReport {
        config: config.clone(),
        report: layer_peeled::check_optimality(&outcome.bank, &problem)?,
        offclass_probability_spread: layer_peeled::offclass_probability_spread(&outcome.bank, &problem),
        trajectory: outcome.trajectory,
    })
}
