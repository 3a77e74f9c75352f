use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;

use crate::error::CliError;

pub const SEED_ENV: &str = "RULFORGE_SEED";
pub const DEFAULT_SEED: u64 = 0;

/// Values from a `key = value` config file. Keys may sit at the top level or
/// under a table named after the subcommand; the subcommand table wins.
#[derive(Debug, Default)]
pub struct Settings {
    table: toml::Table,
    section: String,
}

impl Settings {
    pub fn load(path: Option<&Path>, section: &str) -> Result<Self> {
        let table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::new("InvalidConfig", format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        Ok(Self {
            table,
            section: section.to_string(),
        })
    }

    fn lookup(&self, key: &str) -> Option<&toml::Value> {
        self.table
            .get(&self.section)
            .and_then(|v| v.as_table())
            .and_then(|t| t.get(key))
            .or_else(|| self.table.get(key).filter(|v| !v.is_table()))
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.lookup(key) {
            None => Ok(None),
            Some(v) => v
                .clone()
                .try_into()
                .map(Some)
                .map_err(|e| CliError::new("InvalidConfig", format!("key '{key}': {e}")).into()),
        }
    }

    /// flag, then config file, then `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    /// flag, then config file, else `None`.
    pub fn pick_opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    /// flag, then config file, then `RULFORGE_SEED`, then 0.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = flag {
            return Ok(s);
        }
        if let Some(s) = self.get("seed")? {
            return Ok(s);
        }
        env_seed()
    }
}

pub fn env_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::new("InvalidConfig", format!("{SEED_ENV}={v} is not an unsigned integer")).into()),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(text: &str, section: &str) -> Settings {
        Settings {
            table: text.parse().unwrap(),
            section: section.into(),
        }
    }

    #[test]
    fn flag_beats_section_beats_root() {
        let s = settings("window = 500\n[featurize]\nwindow = 800\n", "featurize");
        assert_eq!(s.pick(Some(100usize), "window", 1000).unwrap(), 100);
        assert_eq!(s.pick(None, "window", 1000usize).unwrap(), 800);
        let other = settings("window = 500\n[featurize]\nwindow = 800\n", "labels");
        assert_eq!(other.pick(None, "window", 1000usize).unwrap(), 500);
        assert_eq!(other.pick(None, "hop", 7usize).unwrap(), 7);
    }

    #[test]
    fn wrong_type_is_a_config_error() {
        let s = settings("window = \"wide\"\n", "featurize");
        let err = s.pick(None, "window", 1000usize).unwrap_err();
        assert_eq!(err.downcast_ref::<CliError>().unwrap().kind, "InvalidConfig");
    }
}
