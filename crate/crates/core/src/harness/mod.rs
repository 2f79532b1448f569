//! Config-driven experiment runner behind the `nzlab` binary.

pub mod config;
pub mod experiments;
pub mod records;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use config::{ExperimentConfig, OutputFormat};
use records::ExperimentRecord;

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io(_) => 2,
        Error::Window { .. } => 3,
        _ => 4,
    }
}

/// Runs one experiment and returns its sorted, fingerprinted records.
pub fn run_records(name: &str, cfg: &ExperimentConfig, workers: usize) -> Result<Vec<ExperimentRecord>> {
    let recs = experiments::run(name, cfg, workers)?;
    records::finalize(recs, &cfg.fingerprint())
}

pub fn render(records: &[ExperimentRecord], format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => records::to_csv(records),
        OutputFormat::Json => records::to_json(records),
    }
}

pub fn write_records(dir: &Path, name: &str, records: &[ExperimentRecord], format: OutputFormat) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let ext = match format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    };
    let path = dir.join(format!("{name}.{ext}"));
    std::fs::write(&path, render(records, format))?;
    Ok(path)
}
