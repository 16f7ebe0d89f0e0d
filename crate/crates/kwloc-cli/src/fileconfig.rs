//! Flat TOML config files as an alternative to flags. Keys mirror the long
//! flag names; explicitly passed flags win over file values.

use crate::{validation, CliResult};
use std::path::Path;

pub struct FileConfig {
    table: toml::Table,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let table = match path {
            None => toml::Table::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    validation(format!("cannot read config {}: {e}", p.display()))
                })?;
                text.parse::<toml::Table>()
                    .map_err(|e| validation(format!("config {}: {e}", p.display())))?
            }
        };
        Ok(FileConfig { table })
    }

    fn get(&self, key: &str) -> Option<&toml::Value> {
        self.table.get(key)
    }

    pub fn u64_key(&self, key: &str) -> CliResult<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(v) => Err(validation(format!(
                "config key '{key}': expected non-negative integer, got {v}"
            ))),
        }
    }

    pub fn usize_key(&self, key: &str) -> CliResult<Option<usize>> {
        Ok(self.u64_key(key)?.map(|v| v as usize))
    }

    pub fn f64_key(&self, key: &str) -> CliResult<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(f)) => Ok(Some(*f)),
            Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(validation(format!(
                "config key '{key}': expected number, got {v}"
            ))),
        }
    }

    pub fn bool_key(&self, key: &str) -> CliResult<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(v) => Err(validation(format!(
                "config key '{key}': expected bool, got {v}"
            ))),
        }
    }

    pub fn string_key(&self, key: &str) -> CliResult<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(validation(format!(
                "config key '{key}': expected string, got {v}"
            ))),
        }
    }
}

/// flag value (if explicitly given) > file value > default.
pub fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
