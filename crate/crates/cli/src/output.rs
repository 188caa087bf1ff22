//! Result tables, CSV/JSON emission and file digests.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Bool(b) => b.to_string(),
            Cell::Int(i) => i.to_string(),
            // Debug gives the shortest round-trip form and switches to exponents at the extremes.
            Cell::Float(x) => format!("{x:?}"),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Float)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width differs from header");
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// One result artifact before it is written.
#[derive(Debug, Clone)]
pub enum Output {
    Table(Table),
    Json(Value),
}

pub fn to_bytes(output: &Output, format: Format) -> Result<Vec<u8>, CliError> {
    match (output, format) {
        (Output::Table(t), Format::Csv) => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
            w.write_record(&t.header)?;
            for row in &t.rows {
                w.write_record(row.iter().map(Cell::render))?;
            }
            w.into_inner().map_err(|e| CliError::Io(e.to_string()))
        }
        (Output::Table(t), Format::Json) => json_bytes(&serde_json::to_value(t)?),
        (Output::Json(v), Format::Json) => json_bytes(v),
        (Output::Json(_), Format::Csv) => Err(CliError::Io("JSON documents cannot be written as CSV".into())),
    }
}

/// Pretty JSON with sorted keys (`serde_json::Map` is ordered) and a trailing newline.
fn json_bytes(v: &Value) -> Result<Vec<u8>, CliError> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write via a temporary sibling and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| CliError::Io(format!("{}: not a file path", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let io = |e: std::io::Error, p: &Path| CliError::Io(format!("{}: {e}", p.display()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| io(e, &tmp))?;
    f.write_all(bytes).map_err(|e| io(e, &tmp))?;
    f.sync_all().map_err(|e| io(e, &tmp))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| io(e, path))
}

/// Serialise and write one artifact; returns the digest of the bytes written.
pub fn emit(output: &Output, format: Format, path: &Path) -> Result<FileDigest, CliError> {
    let bytes = to_bytes(output, format)?;
    write_atomic(path, &bytes)?;
    Ok(FileDigest {
        file: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub tool_version: String,
    pub wall_time_seconds: f64,
    pub threads: usize,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub files: Vec<FileDigest>,
}

impl RunManifest {
    /// Recompute every listed digest from disk.
    pub fn verify(&self, dir: &Path) -> Result<(), CliError> {
        for f in &self.files {
            let p = dir.join(&f.file);
            let bytes = std::fs::read(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            if sha256_hex(&bytes) != f.sha256 || bytes.len() as u64 != f.bytes {
                return Err(CliError::Io(format!("{}: digest mismatch", p.display())));
            }
        }
        Ok(())
    }
}
