//! CSV, JSON and SVG artifact writers. Every file carries the config hash and seed.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn comment_line(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes `rows` under a `# config_hash=… seed=…` line and a header row.
pub fn write_csv(path: &Path, stamp: &Stamp, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "{}", stamp.comment_line())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_svg(path: &Path, stamp: &Stamp, svg: &str) -> Result<()> {
    let stamped = svg.replacen(
        '>',
        &format!(">\n<!-- config_hash={} seed={} -->", stamp.config_hash, stamp.seed),
        1,
    );
    fs::write(path, stamped)?;
    Ok(())
}

/// Formats a float so that it parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}
