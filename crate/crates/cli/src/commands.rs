//! Subcommand implementations. Each returns `Ok(false)` when it ran but its
//! check did not pass.

use std::path::Path;

use ncfscil::etf::{self, EtfPrototypes};
use ncfscil::fscil::FscilConfig;
use ncfscil::nc_metrics::{self, FeatureDump, Scope, Split};
use ncfscil::serialize::to_json_string;
use ncfscil::Result;

use crate::artifacts::{self, metrics_csv};
use crate::config::{ExperimentConfig, LpConfig};
use crate::{repro, Command, EtfCommand, FscilCommand, LpCommand, MetricsCommand, ReportArgs, ReproCommand};

pub fn run(command: Command) -> Result<bool> {
    match command {
        Command::Etf(EtfCommand::Gen { dim, classes, seed, out }) => {
            etf::make_etf::<f64>(dim, classes, seed)?.save(&out)?;
            Ok(true)
        }
        Command::Etf(EtfCommand::Verify { input, tol }) => {
            let protos = EtfPrototypes::<f64>::load(&input)?;
            let cert = etf::verify_etf(&protos, tol);
            print!("{}", to_json_string(&cert)?);
            Ok(cert.passed)
        }
        Command::Lp(LpCommand::Solve { config, out, seed }) => {
            let mut config = LpConfig::load(&config)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let report = artifacts::solve_lp(&config)?;
            write_file(&out, to_json_string(&report)?.as_bytes())?;
            Ok(true)
        }
        Command::Fscil(FscilCommand::Run { config, out_dir, seed }) => {
            let mut config = match config {
                Some(p) => FscilConfig::load(&p)?,
                None => FscilConfig::default(),
            };
            if let Some(s) = seed {
                config.override_seed(s);
            }
            let (files, _) = artifacts::run_fscil(&config)?;
            files.write_to(&out_dir)?;
            Ok(true)
        }
        Command::Metrics(MetricsCommand::Report(args)) => metrics_report(&args),
        Command::Repro(ReproCommand::Full { out_dir, config, seed }) => {
            let mut config = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                config.override_seed(s);
            }
            let outcome = repro::full(&config)?;
            outcome.artifacts.write_to(&out_dir)?;
            for c in &outcome.manifest.criteria {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.id, c.summary);
            }
            Ok(outcome.manifest.passed)
        }
    }
}

fn metrics_report(args: &ReportArgs) -> Result<bool> {
    let dump = FeatureDump::<f64>::load(&args.features)?;
    let protos = EtfPrototypes::<f64>::load(&args.protos)?;
    let scope: Scope = args.scope.parse()?;
    let split: Split = args.split.parse()?;
    let rows = match args.session {
        Some(t) => vec![nc_metrics::report(&dump, protos.matrix(), scope, split, t)?],
        None => nc_metrics::report_all(&dump, protos.matrix(), scope, split)?,
    };
    write_file(&args.out, metrics_csv(&rows).as_bytes())?;
    Ok(true)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}
