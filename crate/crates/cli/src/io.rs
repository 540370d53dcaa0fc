//! File formats: observation CSV, label lists, JSON documents and the run
//! manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tagm::ObservationSequence;

use crate::error::{CliError, CliResult};

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn parse_fields<'a>(fields: impl Iterator<Item = &'a str>, row: usize) -> CliResult<Vec<f64>> {
    fields
        .enumerate()
        .map(|(col, f)| {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| CliError::Data(format!("row {row}, column {}: cannot parse {f:?} as a number", col + 1)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(CliError::Data(format!("row {row}, column {}: value is not finite", col + 1)))
            }
        })
        .collect()
}

/// Reads a numeric CSV; rows are numbered from 1 counting the header line.
pub fn read_observations(path: &Path, header: bool) -> CliResult<ObservationSequence> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { pos, expected_len, len } => CliError::Data(format!(
                "{}: row {} has {len} fields, expected {expected_len}",
                path.display(),
                pos.as_ref().map_or(0, |p| p.line())
            )),
            _ => CliError::Data(format!("{}: {e}", path.display())),
        })?;
        let line = rec.position().map_or(rows.len() + 1, |p| p.line() as usize);
        rows.push(parse_fields(rec.iter(), line)?);
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!("{}: no observations", path.display())));
    }
    Ok(ObservationSequence::from_rows(&rows)?)
}

/// Parses one streamed CSV line.
pub fn parse_row(line: &str, row: usize) -> CliResult<Vec<f64>> {
    parse_fields(line.split(','), row)
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn matrix_csv(m: &DMatrix<f64>, header: bool) -> String {
    let mut out = String::new();
    if header {
        let names: Vec<String> = (0..m.ncols()).map(|j| format!("x{j}")).collect();
        out.push_str(&names.join(","));
        out.push('\n');
    }
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn labels_text(labels: &[usize]) -> String {
    let mut out = String::with_capacity(labels.len() * 2);
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}

pub fn read_labels(path: &Path) -> CliResult<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| CliError::Data(format!("{}: line {}: bad label {l:?}", path.display(), i + 1)))
        })
        .collect()
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn json_text<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

/// Writes output files into one directory and remembers their digests.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<OutputDigest>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        self.written.push(OutputDigest {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(contents.as_bytes())),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.write(name, &json_text(value)?)
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(self, mut manifest: Manifest) -> CliResult<()> {
        manifest.outputs = self.written;
        let path = self.dir.join("manifest.json");
        fs::write(&path, json_text(&manifest)?).map_err(|e| io_err(&path, e))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub outputs: Vec<OutputDigest>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: u64) -> CliResult<Self> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config).map_err(|e| CliError::Data(e.to_string()))?,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timings: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }
}

/// Accumulates per-phase wall-clock time.
pub struct Timer {
    start: std::time::Instant,
}

impl Timer {
    pub fn start() -> Self {
        Self {
            start: std::time::Instant::now(),
        }
    }

    pub fn stop(self, manifest: &mut Manifest, phase: &str) {
        manifest.timings.insert(phase.to_string(), self.start.elapsed().as_secs_f64());
    }
}
