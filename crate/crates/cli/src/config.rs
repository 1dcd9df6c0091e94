//! Run configuration: `key=value` config file merged under command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dvs2s::training::TrainConfig;

use crate::CliError;

/// Non-training keys accepted in config files.
pub const RUN_KEYS: [&str; 15] = [
    "corpus",
    "valid",
    "vocab",
    "lexicon",
    "checkpoint",
    "output",
    "input",
    "hypotheses",
    "references",
    "embeddings",
    "log",
    "max_size",
    "function_min_count",
    "beam",
    "max_len",
];

pub const ENV_CONFIG: &str = "DVS2S_CONFIG";

fn known(key: &str) -> bool {
    TrainConfig::KEYS.contains(&key) || RUN_KEYS.contains(&key)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Reads `path`, or the file named by `DVS2S_CONFIG` when `path` is absent.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let path = match path {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(ENV_CONFIG).filter(|v| !v.is_empty()).map(PathBuf::from),
        };
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(&p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text).map_err(|e| match e {
                    CliError::Usage(m) => CliError::Usage(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut config = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key=value", i + 1)))?;
            config.set(k.trim(), v.trim())?;
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !known(key) {
            return Err(CliError::Usage(format!("unknown configuration key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Flags override file values.
    pub fn apply_flags(&mut self, flags: &[(&str, Option<String>)]) -> Result<(), CliError> {
        for (k, v) in flags {
            if let Some(v) = v {
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key)
            .ok_or_else(|| CliError::Usage(format!("missing --{} (or `{key}` in the config file)", key.replace('_', "-"))))
    }

    pub fn parsed<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("invalid value {v:?} for {key}"))),
        }
    }

    /// Training keys present, in canonical order.
    pub fn train_overrides(&self) -> impl Iterator<Item = (&'static str, &str)> + '_ {
        TrainConfig::KEYS
            .iter()
            .filter_map(|&k| self.get(k).map(|v| (k, v)))
    }

    /// `base` with every training key present here applied on top.
    pub fn train_config(&self, mut base: TrainConfig) -> Result<TrainConfig, CliError> {
        for (k, v) in self.train_overrides() {
            base.set(k, v).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        base.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut c = RunConfig::parse("# comment\nembed = 16\nvocab=v.txt\n\nbeam=3\n").unwrap();
        c.apply_flags(&[("embed", Some("32".into())), ("beam", None)]).unwrap();
        assert_eq!(c.get("embed"), Some("32"));
        assert_eq!(c.get("beam"), Some("3"));
        assert_eq!(c.path("vocab"), Some(PathBuf::from("v.txt")));
        let t = c.train_config(TrainConfig::default()).unwrap();
        assert_eq!(t.embed, 32);
        assert_eq!(c.parsed("max_len", 50usize).unwrap(), 50);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(RunConfig::parse("colour=red"), Err(CliError::Usage(m)) if m.contains("colour")));
        assert!(RunConfig::parse("embed").is_err());
        let c = RunConfig::parse("hidden=7").unwrap();
        assert!(c.train_config(TrainConfig::default()).is_err());
        let c = RunConfig::parse("beam=x").unwrap();
        assert!(c.parsed("beam", 1usize).is_err());
    }
}
