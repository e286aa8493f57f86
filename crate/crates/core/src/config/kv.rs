//! The flat `key=value` text dialect shared by `meta.txt`, run
//! configurations, and checkpoint headers. Blank lines and lines starting
//! with `#` are ignored; whitespace around keys and values is trimmed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
    order: Vec<String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut kv = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::format(source, format!("line {}: expected key=value", n + 1)));
            };
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::format(source, format!("line {}: empty key", n + 1)));
            }
            if kv.entries.contains_key(k) {
                return Err(Error::format(source, format!("line {}: duplicate key {k}", n + 1)));
            }
            kv.set(k, v.trim());
        }
        Ok(kv)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Inserts or replaces a value; new keys go to the end.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        if self.entries.insert(key.to_string(), value.into()).is_none() {
            self.order.push(key.to_string());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.order.retain(|k| k != key);
        self.entries.remove(key)
    }

    pub fn require(&self, key: &str, source: &Path) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::format(source, format!("missing key {key}")))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str, source: &Path) -> Result<T> {
        let raw = self.require(key, source)?;
        raw.parse()
            .map_err(|_| Error::format(source, format!("cannot parse {key}={raw}")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in &self.order {
            let _ = writeln!(out, "{k}={}", self.entries[k]);
        }
        out
    }
}
