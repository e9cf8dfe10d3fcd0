//! Flat `key = value` run configuration with `--set` overrides.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys are
//! rejected. `VAELAB_DATA` provides a data-root fallback for relative
//! image/label paths.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

/// Every key any command understands. Validation is global so a typo is
/// caught no matter which command runs.
const KNOWN_KEYS: &[&str] = &[
    "images",
    "labels",
    "data_root",
    "subset",
    "out_dir",
    "seed",
    "latent_dim",
    "hidden",
    "family",
    "sigma",
    "lr",
    "batch_size",
    "steps",
    "column",
    "binarize",
    "n_samples",
    "n",
    "k",
    "sweep_family",
    "sigmas",
    "xs",
    "quad_points",
    "ring_train",
    "ring_steps",
    "emit_timing",
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn from_sources(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    ConfigError(format!(
                        "{}:{}: expected 'key = value', got '{raw}'",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                cfg.insert(key.trim(), value.trim())?;
            }
        }
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("--set expects KEY=VALUE, got '{item}'")))?;
            cfg.insert(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    fn insert(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(ConfigError(format!(
                "unknown key '{key}' (known keys: {})",
                KNOWN_KEYS.join(", ")
            )));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.raw(key).unwrap_or(default)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| {
                ConfigError(format!("'{key}' must be a non-negative integer, got '{s}'"))
            }),
        }
    }

    pub fn positive_usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        let v = self.usize_or(key, default)?;
        if v == 0 {
            return Err(ConfigError(format!("'{key}' must be positive")));
        }
        Ok(v)
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| ConfigError(format!("'{key}' must be an integer, got '{s}'"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| ConfigError(format!("'{key}' must be a number, got '{s}'"))),
        }
    }

    pub fn positive_f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.f64_or(key, default)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(ConfigError(format!("'{key}' must be positive and finite")));
        }
        Ok(v)
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some("true") | Some("on") | Some("1") => Ok(true),
            Some("false") | Some("off") | Some("0") => Ok(false),
            Some(s) => Err(ConfigError(format!(
                "'{key}' must be true/false, got '{s}'"
            ))),
        }
    }

    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse()
                        .map_err(|_| ConfigError(format!("'{key}': cannot parse '{item}'")))
                })
                .collect(),
        }
    }

    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>, ConfigError> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse()
                        .map_err(|_| ConfigError(format!("'{key}': cannot parse '{item}'")))
                })
                .collect(),
        }
    }

    /// Image/label paths, resolved against `data_root` (or `VAELAB_DATA`)
    /// when relative.
    pub fn data_path(&self, key: &str) -> Result<Option<PathBuf>, ConfigError> {
        let raw = match self.raw(key) {
            Some(r) => r,
            None => return Ok(None),
        };
        let p = PathBuf::from(raw);
        if p.is_absolute() {
            return Ok(Some(p));
        }
        let root = self
            .raw("data_root")
            .map(PathBuf::from)
            .or_else(|| std::env::var("VAELAB_DATA").ok().map(PathBuf::from));
        Ok(Some(match root {
            Some(root) => root.join(p),
            None => p,
        }))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.str_or("out_dir", "out"))
    }
}
