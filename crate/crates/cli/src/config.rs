//! Flat `key = value` configuration files.
//!
//! ```text
//! # desk-scale SINC-GCN run
//! model = sinc-gcn
//! epochs = 200
//! seeds = 0, 1, 2
//! ```
//!
//! Keys are case-insensitive and `-` is read as `_`. Lists are
//! comma-separated. Command-line flags override file values, which override
//! built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

use crate::UsageError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, (usize, String)>,
    source: String,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

impl ConfigFile {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(UsageError(format!("{source}:{line_no}: expected `key = value`, got `{line}`")).into());
            };
            let key = normalize(key);
            if key.is_empty() {
                return Err(UsageError(format!("{source}:{line_no}: empty key")).into());
            }
            if let Some((first, _)) = values.insert(key.clone(), (line_no, value.trim().to_string())) {
                return Err(UsageError(format!("{source}:{line_no}: `{key}` already set on line {first}")).into());
            }
        }
        Ok(Self {
            values,
            source: source.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Loads `path` if given, or an empty file.
    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Rejects keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (key, (line, _)) in &self.values {
            if !allowed.contains(&key.as_str()) {
                bail!(UsageError(format!(
                    "{}:{line}: unknown key `{key}` (valid: {})",
                    self.source,
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(|(_, v)| v.as_str())
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let key = normalize(key);
        match self.values.get(&key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| UsageError(format!("{}:{line}: `{key}`: {e}", self.source)).into()),
        }
    }

    pub fn get_list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let key = normalize(key);
        match self.values.get(&key) {
            None => Ok(None),
            Some((line, v)) => parse_list(v)
                .map(Some)
                .map_err(|e| UsageError(format!("{}:{line}: `{key}`: {e}", self.source)).into()),
        }
    }

    /// `flag`, else the file value, else `default`.
    pub fn resolve<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    pub fn resolve_list<T>(&self, key: &str, flag: Option<Vec<T>>, default: Vec<T>) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get_list(key)?.unwrap_or(default)),
        }
    }
}

/// Comma-separated values; empty items are skipped.
pub fn parse_list<T>(text: &str) -> std::result::Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: T::Err| format!("`{s}`: {e}")))
        .collect()
}
