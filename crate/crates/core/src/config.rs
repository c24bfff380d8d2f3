//! `key=value` configuration text.
//!
//! One pair per line; blank lines and `#` comments are ignored, surrounding
//! whitespace is trimmed. Later lines override earlier ones. Readers take the
//! keys they understand and [`KeyValues::finish`] rejects any left over.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{io_err, Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}"))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn take_string(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    /// Errors if any key was never taken.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
            Err(Error::Config(format!("unknown keys: {}", keys.join(", "))))
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Drops every remaining key under one of `prefixes`.
    pub fn discard_prefixed(&mut self, prefixes: &[&str]) {
        self.entries.retain(|k, _| !prefixes.iter().any(|p| k.starts_with(p)));
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
