//! Run configuration: one JSON file naming a command, a flat parameter map and an output root.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pinlab_core::Mode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Green,
    Annealed,
    Quenched,
    Fracmom,
    Renewal,
    Pam,
    Polymer,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Green => "green",
            Command::Annealed => "annealed",
            Command::Quenched => "quenched",
            Command::Fracmom => "fracmom",
            Command::Renewal => "renewal",
            Command::Pam => "pam",
            Command::Polymer => "polymer",
        }
    }

    /// Keys that must be present, whatever the mode.
    fn required(&self) -> &'static [&'static str] {
        match self {
            Command::Green | Command::Annealed => &["d"],
            Command::Quenched => &["d", "beta"],
            Command::Fracmom => &["d"],
            Command::Renewal => &[],
            Command::Pam => &["d", "beta", "rho", "t"],
            Command::Polymer => &["d", "n", "lambda"],
        }
    }

    fn allowed(&self) -> &'static [&'static str] {
        match self {
            Command::Green => &["mode", "d", "rho", "eps", "h", "n0", "seed"],
            Command::Annealed => &["mode", "d", "rho", "zs", "n", "tol", "n_max", "dt", "s_max", "seed"],
            Command::Quenched => &["mode", "d", "beta", "rho", "n", "t", "replicas", "seed", "eps"],
            Command::Fracmom => &[
                "mode", "d", "z", "beta_bar", "rho", "gamma", "h", "r", "epsilon", "replicas", "seed",
                "steps_per_unit", "n", "holder_n", "couplings", "shrink_zs",
            ],
            Command::Renewal => &["d", "n_max", "c", "delta1", "delta2", "n_grid", "alpha", "replicas", "seed"],
            Command::Pam => &["d", "beta", "rho", "t", "replicas", "seed", "free_energy"],
            Command::Polymer => &["d", "n", "lambda", "values", "probs", "replicas", "seed", "cubic"],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional in the file; when present it must match the command given on the command line.
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed config: {e}")))
    }

    /// Check keys for `command` and return typed access to the parameters.
    pub fn params_for(&self, command: Command) -> Result<Params, CliError> {
        if let Some(c) = self.command {
            if c != command {
                return Err(CliError::Config(format!("key `command`: config says {} but {} was requested", c.as_str(), command.as_str())));
            }
        }
        let allowed = command.allowed();
        if let Some(k) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(CliError::Config(format!("unknown key `{k}` for command {}", command.as_str())));
        }
        if let Some(k) = command.required().iter().find(|k| !self.params.contains_key(**k)) {
            return Err(CliError::Config(format!("missing required key `{k}` for command {}", command.as_str())));
        }
        let p = Params { map: self.params.clone() };
        p.mode()?;
        Ok(p)
    }
}

/// Typed view of the flat parameter map. Every error names the offending key.
#[derive(Debug, Clone)]
pub struct Params {
    map: BTreeMap<String, Value>,
}

fn bad(key: &str, want: &str) -> CliError {
    CliError::Config(format!("key `{key}` must be {want}"))
}

impl Params {
    pub fn map(&self) -> &BTreeMap<String, Value> {
        &self.map
    }

    pub fn set(&mut self, key: &str, v: Value) {
        self.map.insert(key.to_string(), v);
    }

    pub fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn mode(&self) -> Result<Mode, CliError> {
        match self.map.get("mode") {
            None => Ok(Mode::Discrete),
            Some(Value::String(s)) if s == "discrete" => Ok(Mode::Discrete),
            Some(Value::String(s)) if s == "continuous" => Ok(Mode::Continuous),
            Some(_) => Err(bad("mode", "\"discrete\" or \"continuous\"")),
        }
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v.as_f64().filter(|x| x.is_finite()).map(Some).ok_or_else(|| bad(key, "a finite number")),
        }
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        self.opt_f64(key)?.ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.opt_f64(key)?.unwrap_or(default))
    }

    pub fn opt_u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| bad(key, "a nonnegative integer")),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.opt_u64(key)?.map(|v| v as usize).ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        Ok(self.opt_u64(key)?.map(|v| v as usize).unwrap_or(default))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        Ok(self.opt_u64("seed")?.unwrap_or(1))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.as_bool().ok_or_else(|| bad(key, "a boolean")),
        }
    }

    pub fn opt_f64s(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(Value::Array(xs)) => xs
                .iter()
                .map(|v| v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| bad(key, "an array of finite numbers")))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => Err(bad(key, "an array of numbers")),
        }
    }

    pub fn opt_usizes(&self, key: &str) -> Result<Option<Vec<usize>>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(Value::Array(xs)) => xs
                .iter()
                .map(|v| v.as_u64().map(|x| x as usize).ok_or_else(|| bad(key, "an array of nonnegative integers")))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => Err(bad(key, "an array of integers")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_and_missing_keys_are_named() {
        let c = ExperimentConfig::from_json(r#"{"params": {"d": 4, "colour": 1}}"#).unwrap();
        let e = c.params_for(Command::Green).unwrap_err().to_string();
        assert!(e.contains("`colour`"), "{e}");
        let c = ExperimentConfig::from_json(r#"{"params": {"mode": "discrete"}}"#).unwrap();
        let e = c.params_for(Command::Green).unwrap_err().to_string();
        assert!(e.contains("`d`"), "{e}");
    }

    #[test]
    fn top_level_unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"params": {}, "extra": true}"#).is_err());
    }

    #[test]
    fn command_mismatch_is_a_config_error() {
        let c = ExperimentConfig::from_json(r#"{"command": "pam", "params": {"d": 4}}"#).unwrap();
        assert!(matches!(c.params_for(Command::Green), Err(CliError::Config(_))));
    }

    #[test]
    fn typed_getters() {
        let c = ExperimentConfig::from_json(r#"{"params": {"d": 4, "mode": "continuous", "rho": 0.5, "zs": [1.1, 1.2]}}"#).unwrap();
        let p = c.params_for(Command::Annealed).unwrap();
        assert_eq!(p.usize("d").unwrap(), 4);
        assert_eq!(p.mode().unwrap(), Mode::Continuous);
        assert_eq!(p.opt_f64s("zs").unwrap().unwrap(), vec![1.1, 1.2]);
        assert!(p.usize("rho").is_err());
        let c = ExperimentConfig::from_json(r#"{"params": {"d": 4, "mode": "sideways"}}"#).unwrap();
        assert!(c.params_for(Command::Green).unwrap_err().to_string().contains("`mode`"));
    }
}
