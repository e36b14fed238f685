//! Run orchestration for qsol-core: configuration, subcommands, CSV
//! artifacts with a checksummed manifest, verification and reports.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use artifacts::RunDir;
use config::{Mode, RunConfig};
use error::CliError;

/// Runs the configured mode. Tables are written even when the run fails;
/// the manifest records the outcome.
pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    match cfg.mode {
        Mode::Catalog => {
            print!("{}", qsol_core::toric::catalog_table());
            Ok(())
        }
        Mode::Report => report::emit_report(&cfg.out),
        mode => {
            let mut dir = RunDir::create(cfg)?;
            let result = match mode {
                Mode::Basis => commands::basis(cfg, &mut dir),
                Mode::Xi => commands::xi(cfg, &mut dir),
                Mode::Balance => commands::balance(cfg, &mut dir),
                Mode::Spectrum => commands::spectrum(cfg, &mut dir),
                Mode::Verify => commands::verify(cfg, &mut dir),
                Mode::Catalog | Mode::Report => unreachable!(),
            };
            let status = match &result {
                Ok(()) => "ok",
                Err(CliError::ChecksFailed(_)) => "checks-failed",
                Err(_) => "failed",
            };
            dir.finish(status)?;
            result
        }
    }
}
