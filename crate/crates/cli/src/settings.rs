//! Layered run configuration: command line over config file over defaults.
//!
//! Config files are flat `key=value` text. Keys are the long flag names
//! (`per-class`, `student-dims`, ...). Blank lines and `#` comments are
//! ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "RECTIDISTILL_OUT";

/// Fully merged `key → value` view of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config line {}: expected key=value", i + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

impl Settings {
    /// Merge the layers. `defaults` lists every key the command accepts;
    /// unknown keys in the config file are rejected.
    pub fn merge(
        defaults: &[(&str, String)],
        config: Option<&Path>,
        cli: &[(&str, Option<String>)],
    ) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> = defaults
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        if let Some(path) = config {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (k, v) in parse_config_text(&text)? {
                if !values.contains_key(&k) {
                    return Err(CliError::Usage(format!(
                        "config {}: unknown key '{k}'",
                        path.display()
                    )));
                }
                values.insert(k, v);
            }
        }
        for (k, v) in cli {
            if let Some(v) = v {
                values.insert(k.to_string(), v.clone());
            }
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::Usage(format!("--{key}: cannot parse '{raw}': {e}")))
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.raw(key))
    }

    /// Comma-separated layer widths, e.g. `2,64,4`.
    pub fn dims(&self, key: &str) -> Result<Vec<usize>, CliError> {
        self.raw(key)
            .split(',')
            .map(|d| {
                d.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("--{key}: bad width '{d}'")))
            })
            .collect()
    }

    /// `key=value` lines in key order, the format the config file accepts.
    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

/// Output directory default: `$RECTIDISTILL_OUT/<name>` or `out/<name>`.
pub fn default_out_dir(name: &str) -> String {
    let root = std::env::var(OUT_ENV).unwrap_or_else(|_| "out".to_string());
    Path::new(&root).join(name).to_string_lossy().into_owned()
}
