// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Flat `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Keys may carry a dotted prefix (`telegraph.n_traces`) which callers use
//! to route entries to module-specific blocks.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value {value:?} for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

/// A single parsed assignment, remembering where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub value: String,
}

/// Parsed configuration: key → entry, in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, Entry>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || value.is_empty() || key.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            }
            if entries.contains_key(key) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            entries.insert(
                key.to_string(),
                Entry {
                    line,
                    value: value.to_string(),
                },
            );
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Line on which `key` was defined.
    pub fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.line)
    }

    /// Removes and parses `key`, if present.
    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(entry) => entry.value.parse::<T>().map(Some).map_err(|e| ConfigError::BadValue {
                line: entry.line,
                key: key.to_string(),
                value: entry.value.clone(),
                reason: e.to_string(),
            }),
        }
    }

    /// Like [`take`](Self::take) but writes into `slot` only when the key exists.
    pub fn take_into<T>(&mut self, key: &str, slot: &mut T) -> Result<(), ConfigError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Splits off every key starting with `prefix.`, stripping the prefix.
    pub fn split_prefix(&mut self, prefix: &str) -> KeyValues {
        let dotted = format!("{prefix}.");
        let keys: Vec<String> = self
            .entries
            .keys()
            .filter(|k| k.starts_with(&dotted))
            .cloned()
            .collect();
        let mut out = BTreeMap::new();
        for k in keys {
            let entry = self.entries.remove(&k).expect("key listed above");
            out.insert(k[dotted.len()..].to_string(), entry);
        }
        KeyValues { entries: out }
    }

    /// Fails on the first key nobody consumed.
    pub fn ensure_consumed(&self) -> Result<(), ConfigError> {
        match self.entries.iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((key, entry)) => Err(ConfigError::UnknownKey {
                line: entry.line,
                key: key.clone(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let kv = KeyValues::parse("# header\n\ng_mhz = 8  # coupling\nkappa_mhz=0.4\n").unwrap();
        assert_eq!(kv.keys().collect::<Vec<_>>(), vec!["g_mhz", "kappa_mhz"]);
    }

    #[test]
    fn syntax_error_carries_line_number() {
        let err = KeyValues::parse("a = 1\nnot an assignment\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Syntax {
                line: 2,
                text: "not an assignment".into()
            }
        );
        assert!(err.to_string().starts_with("line 2:"));
    }

    #[test]
    fn duplicate_keys_rejected() {
        let err = KeyValues::parse("a = 1\na = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::Duplicate { line: 2, .. }));
    }

    #[test]
    fn bad_value_and_unknown_key() {
        let mut kv = KeyValues::parse("x = abc\ny = 3\n").unwrap();
        let err = kv.take::<f64>("x").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { line: 1, .. }));
        let err = kv.ensure_consumed().unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                line: 2,
                key: "y".into()
            }
        );
    }

    #[test]
    fn prefix_split() {
        let mut kv = KeyValues::parse("seed = 1\nnms.pulse_us = 70\nnms.branch_to_f3 = 0.5\n").unwrap();
        let mut nms = kv.split_prefix("nms");
        assert_eq!(nms.take::<f64>("pulse_us").unwrap(), Some(70.0));
        assert_eq!(nms.take::<f64>("branch_to_f3").unwrap(), Some(0.5));
        nms.ensure_consumed().unwrap();
        assert_eq!(kv.take::<u64>("seed").unwrap(), Some(1));
        kv.ensure_consumed().unwrap();
    }
}
