//! Key-value config files and the flag-over-file resolution order.
//!
//! A config file holds `key = value` lines (`#` starts a comment) using
//! the long flag names without the leading dashes. Command-line flags
//! override file values; file values override built-in defaults. Every
//! resolved value is recorded for the run manifest.

use anyhow::{anyhow, bail, Context, Result};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

/// Keys a config file may set.
const KNOWN_KEYS: &[&str] = &[
    "max-order",
    "hidden-dim",
    "fusion-dim",
    "dropout",
    "lr",
    "max-epochs",
    "patience",
    "train-fraction",
    "val-fraction",
    "trials",
    "seed",
    "threads",
    "loss-reduction",
    "restrict-fusion-mean",
    "weight-decay",
    "monitor",
    "precision",
    "no-classifier",
    "nnz-cap",
];

/// Parsed config file contents (empty when no file was given).
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        let Some(path) = path else {
            return Ok(Self { values });
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                anyhow!(
                    "{}:{}: expected `key = value`, got `{raw}`",
                    path.display(),
                    lineno + 1
                )
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                bail!(
                    "{}:{}: unknown config key `{key}` (known: {})",
                    path.display(),
                    lineno + 1,
                    KNOWN_KEYS.join(", ")
                );
            }
            if values
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                bail!(
                    "{}:{}: config key `{key}` set twice",
                    path.display(),
                    lineno + 1
                );
            }
        }
        Ok(Self { values })
    }
}

/// Resolves each setting from flag, file, or default, recording the
/// outcome for the manifest.
pub struct Resolver<'a> {
    file: &'a FileConfig,
    resolved: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a FileConfig) -> Self {
        Self {
            file,
            resolved: BTreeMap::new(),
        }
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered config key {key}");
        let value = match flag {
            Some(v) => v,
            None => match self.file.values.get(key) {
                Some(raw) => raw
                    .parse()
                    .map_err(|e| anyhow!("config key `{key}`: cannot parse `{raw}`: {e}"))?,
                None => default,
            },
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn into_resolved(self) -> BTreeMap<String, String> {
        self.resolved
    }
}
