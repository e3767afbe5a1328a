use std::collections::BTreeMap;
use std::path::Path;

use super::DataError;

/// Flat `key=value` configuration. Blank lines and `#` comments are skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| DataError::Config {
                line: i + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(DataError::Config {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(DataError::Config {
                    line: i + 1,
                    message: format!("duplicate key {k:?}"),
                });
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, DataError> {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|_| DataError::Config {
                    line: 0,
                    message: format!("invalid value {v:?} for {key}"),
                })
            })
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}
