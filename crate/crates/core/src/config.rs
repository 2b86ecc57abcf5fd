//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use the long
//! CLI flag names with `-` or `_` (`top-k` and `top_k` are the same key).
//! A value given on the command line wins over the matching `UPD_*`
//! environment variable, which wins over the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
            let key = normalize(k);
            if key.is_empty() {
                return Err(Error::Config(format!("config line {}: empty key", n + 1)));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("config line {}: duplicate key {key:?}", n + 1)));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get_str(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| Error::Config(format!("config key {key:?}: {e}")))
            })
            .transpose()
    }

    /// `flag` (already merged with its environment variable) if set, else the file value.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_precedence() {
        let cfg = ConfigFile::parse("# run\nseed = 7\ntop-k=3\n\nweights = w.bin\n").unwrap();
        assert_eq!(cfg.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(cfg.get::<usize>("top_k").unwrap(), Some(3));
        assert_eq!(cfg.get_str("weights"), Some("w.bin"));
        assert_eq!(cfg.resolve(Some(9u64), "seed").unwrap(), Some(9));
        assert_eq!(cfg.resolve(None::<u64>, "seed").unwrap(), Some(7));
        assert_eq!(cfg.resolve(None::<u64>, "workers").unwrap(), None);
        assert!(cfg.get::<u64>("weights").is_err());
    }

    #[test]
    fn rejects_malformed() {
        assert!(ConfigFile::parse("seed 7").is_err());
        assert!(ConfigFile::parse("= 7").is_err());
        assert!(ConfigFile::parse("seed=1\nseed=2").is_err());
    }
}
