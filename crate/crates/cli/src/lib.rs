//! Experiment runner behind the `pinlab` binary.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use pinlab_core::PinError;
use serde_json::json;
use thiserror::Error;

pub use config::{Command, ExperimentConfig, Params};
pub use output::{emit, Cell, FileDigest, Format, Output, RunManifest, Table};

use crate::commands::{dispatch, Cache};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) | CliError::Io(_) => 2,
        }
    }
}

impl From<PinError> for CliError {
    fn from(e: PinError) -> Self {
        match e {
            PinError::InvalidArgument(_) | PinError::Recurrent(_) => CliError::Config(e.to_string()),
            PinError::Io(_) | PinError::Csv(_) | PinError::Json(_) | PinError::Cache { .. } => CliError::Io(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    /// Kernel cache root; defaults to `PINLAB_CACHE`, then `<out>/kernel_cache`.
    pub cache_root: Option<PathBuf>,
}

fn cache_root(opts: &RunOptions, out: &Path) -> PathBuf {
    opts.cache_root
        .clone()
        .or_else(|| std::env::var_os("PINLAB_CACHE").map(PathBuf::from))
        .unwrap_or_else(|| out.join("kernel_cache"))
}

/// Validate, compute, then write every artifact atomically with the manifest last.
pub fn run(command: Command, config: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let mut params = config.params_for(command)?;
    if let Some(seed) = opts.seed {
        params.set("seed", json!(seed));
    }
    let out = opts
        .out
        .clone()
        .or_else(|| config.output.clone())
        .ok_or_else(|| CliError::Config("key `output` is missing and --out was not given".into()))?;
    let threads = opts.threads.unwrap_or_else(rayon::current_num_threads);
    if threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    let mut cache = Cache { root: cache_root(opts, &out), hits: 0, misses: 0 };
    let artifacts = pool.install(|| dispatch(command, &params, &mut cache))?;

    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let mut files = Vec::with_capacity(artifacts.len());
    for a in &artifacts {
        files.push(emit(&a.output, a.format, &out.join(&a.name))?);
    }
    let manifest = RunManifest {
        command: command.as_str().into(),
        config: json!({
            "command": command.as_str(),
            "params": params.map(),
            "output": out.to_string_lossy(),
        }),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        threads,
        cache_hits: cache.hits,
        cache_misses: cache.misses,
        files,
    };
    emit(&Output::Json(serde_json::to_value(&manifest)?), Format::Json, &out.join(MANIFEST))?;
    Ok(manifest)
}
