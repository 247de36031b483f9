//! `repro full`: every certification and the ablation, with a PASS/FAIL manifest.

use std::path::{Path, PathBuf};

use ncfscil::etf;
use ncfscil::serialize::to_json_string;
use ncfscil::Result;
use serde::Serialize;

use crate::artifacts::{self, metrics_csv, Artifacts};
use crate::checks::{self, Criterion, Thresholds};
use crate::config::{ExperimentConfig, SCHEMA_VERSION};

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: String,
    pub passed: bool,
    pub criteria: Vec<Criterion>,
}

#[derive(Debug, Clone)]
pub struct ReproOutcome {
    pub artifacts: Artifacts,
    pub manifest: Manifest,
}

/// All artifacts plus the criteria that can be judged from a single build.
fn build(config: &ExperimentConfig, th: &Thresholds) -> Result<(Artifacts, Vec<Criterion>)> {
    let mut out = Artifacts::default();
    let mut criteria = Vec::new();

    let mut certs = Vec::new();
    for &(d, k) in &config.etf.cases {
        for &seed in &config.etf.seeds {
            let protos = etf::make_etf::<f64>(d, k, seed)?;
            certs.push(serde_json::json!({
                "dim": d,
                "num_classes": k,
                "seed": seed,
                "certificate": etf::verify_etf(&protos, config.etf.tol),
            }));
            if (d, k) == (16, 10) {
                out.insert_text(format!("etf/etf_d{d}_k{k}_s{seed}.json"), protos.to_json()?);
            }
        }
    }
    out.insert_text("etf/certificates.json", to_json_string(&certs)?);
    criteria.push(checks::etf_geometry(&config.etf.cases, &config.etf.seeds, &th.etf)?);
    criteria.push(checks::gradients(&th.gradients, config.layer_peeled.dr.seed)?);

    let dr = artifacts::solve_lp(&config.layer_peeled.dr)?;
    out.insert_text("lp/dr.json", to_json_string(&dr)?);
    criteria.push(checks::lp_dr(&dr, &th.lp_dr));
    let ce = artifacts::solve_lp(&config.layer_peeled.ce)?;
    out.insert_text("lp/ce.json", to_json_string(&ce)?);
    criteria.push(checks::lp_ce(&ce, &th.lp_ce));

    let (fscil_files, results) = artifacts::run_fscil(&config.fscil)?;
    out.nest(Path::new("fscil"), fscil_files);
    criteria.push(checks::ablation_ordering(&results, &th.ablation));

    for (seed, res) in &results {
        for run in &res.runs {
            for &scope in &config.metrics.scopes {
                for &split in &config.metrics.splits {
                    let rows = run.metrics.iter().filter(|m| m.scope == scope && m.split == split);
                    let path = PathBuf::from(format!(
                        "metrics/seed_{seed}/{}/{}_{}.csv",
                        run.arm.as_str(),
                        scope.as_str(),
                        split.as_str()
                    ));
                    out.insert_text(path, metrics_csv(rows));
                }
            }
        }
    }
    criteria.push(checks::collapse_fixture(&th.collapse_fixture, config.layer_peeled.dr.seed)?);
    criteria.push(checks::collapse_trend(&results, &th.trend));
    Ok((out, criteria))
}

/// Builds everything twice, checks the two builds agree byte for byte, and
/// adds `manifest.json`.
pub fn full(config: &ExperimentConfig) -> Result<ReproOutcome> {
    let th = Thresholds::pinned();
    let (mut artifacts, mut criteria) = build(config, &th)?;
    let (again, _) = build(config, &th)?;
    criteria.push(checks::determinism(artifacts == again, artifacts.len()));
    let manifest = Manifest {
        version: SCHEMA_VERSION.into(),
        passed: criteria.iter().all(|c| c.passed),
        criteria,
    };
    artifacts.insert_text("manifest.json", to_json_string(&manifest)?);
    Ok(ReproOutcome { artifacts, manifest })
}
