//! Files written for a finished run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::diagnostics::{write_exchange_csv, write_trace_csv};
use crate::error::Result;
use crate::sampler::RunReport;

pub const SAMPLES_FILE: &str = "samples.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "ladder_trace.csv";
pub const EXCHANGE_FILE: &str = "exchange.csv";
pub const CONFIG_FILE: &str = "effective_config.toml";

/// Writes `x1..xd` rows, one per kept sample.
pub fn write_samples_csv<W: Write>(
    mut out: W,
    samples: &[Vec<f64>],
    dimension: usize,
) -> Result<()> {
    let header: Vec<String> = (1..=dimension).map(|j| format!("x{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for s in samples {
        let row: Vec<String> = s.iter().map(f64::to_string).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes every run artifact into `dir`, creating it if needed, and returns
/// the paths written.
pub fn write_run_outputs(dir: &Path, report: &RunReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;

    let mut w = create(dir, SAMPLES_FILE)?;
    write_samples_csv(&mut w, &report.samples, report.dimension)?;
    w.flush()?;

    let mut w = create(dir, REPORT_FILE)?;
    serde_json::to_writer_pretty(&mut w, report)?;
    writeln!(w)?;
    w.flush()?;

    let mut w = create(dir, TRACE_FILE)?;
    write_trace_csv(&mut w, &report.trace)?;
    w.flush()?;

    let mut w = create(dir, EXCHANGE_FILE)?;
    write_exchange_csv(&mut w, &report.exchange)?;
    w.flush()?;

    fs::write(dir.join(CONFIG_FILE), report.config.to_toml()?)?;

    Ok([
        SAMPLES_FILE,
        REPORT_FILE,
        TRACE_FILE,
        EXCHANGE_FILE,
        CONFIG_FILE,
    ]
    .iter()
    .map(|n| dir.join(n))
    .collect())
}
