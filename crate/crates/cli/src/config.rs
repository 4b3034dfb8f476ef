//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Keys are case-sensitive.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

/// Every key the commands understand.
pub const KNOWN_KEYS: &[&str] = &[
    "D",
    "L",
    "sigma0",
    "d",
    "plan",
    "batch",
    "seed",
    "source",
    "target",
    "quark",
    "antiquark",
    "lr",
    "iterations",
    "warmup",
    "hidden",
    "activation",
    "noise",
    "ema_decay",
    "weight_decay",
    "steps",
    "use_ema",
    "separation",
    "segments",
    "samples",
    "starts",
    "traces",
    "reference",
    "null_repetitions",
    "scale",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
    base: PathBuf,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`, got `{line}`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                return Err(CliError::Usage(format!("config line {}: unknown key `{k}`", n + 1)));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(CliError::Usage(format!("config line {}: duplicate key `{k}`", n + 1)));
            }
        }
        Ok(Self { values, base: PathBuf::new() })
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut c = Self::parse(&text)?;
        c.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(c)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| CliError::Usage(format!("config key `{key}`: cannot parse `{v}`: {e}"))))
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| CliError::Usage(format!("config is missing required key `{key}`")))
    }

    pub fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list of numbers.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.values.get(key) else { return Ok(None) };
        v.split(',')
            .map(|s| {
                s.trim().parse::<T>().map_err(|e| CliError::Usage(format!("config key `{key}`: cannot parse `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(|v| {
            let p = PathBuf::from(v);
            if p.is_relative() {
                self.base.join(p)
            } else {
                p
            }
        })
    }
}
