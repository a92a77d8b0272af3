//! Flat `key = value` run configuration with dotted section keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub source: PathBuf,
}

impl RawConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, path, &base)
    }

    /// Parses `key = value` lines; `#` starts a comment line, keys may not repeat.
    pub fn parse(text: &str, source: &Path, base_dir: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| CliError::parse(source, i + 1, 1, format!("expected `key = value`, found `{t}`")))?;
            let key = k.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c)) {
                return Err(CliError::parse(source, i + 1, 1, format!("invalid key `{key}`")));
            }
            if entries.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(CliError::parse(source, i + 1, 1, format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { entries, base_dir: base_dir.to_path_buf(), source: source.to_path_buf() })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| CliError::Config(format!("invalid value `{v}` for `{key}`"))))
            .transpose()
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(CliError::Config(format!("invalid boolean `{v}` for `{key}`"))),
        }
    }

    /// Comma-separated list; absent or empty values give an empty list.
    pub fn list(&self, key: &str) -> Vec<String> {
        self.get(key).map(split_list).unwrap_or_default()
    }

    pub fn parsed_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.list(key)
            .into_iter()
            .map(|v| v.parse::<T>().map_err(|_| CliError::Config(format!("invalid element `{v}` in `{key}`"))))
            .collect()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|p| self.base_dir.join(p))
    }

    /// Entries whose key starts with `prefix.`, with the prefix stripped, in key order.
    pub fn section(&self, prefix: &str) -> Vec<(&str, &str)> {
        let p = format!("{prefix}.");
        self.entries.iter().filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s, v.as_str()))).collect()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// SHA-256 of the canonical (sorted, normalized) entries, hex encoded.
    /// The output location does not change results and is left out.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries.iter().filter(|(k, _)| k.as_str() != "output.dir") {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Fails on keys that no workflow reads, which catches typos early.
    pub fn check_known(&self, known_prefixes: &[&str]) -> Result<()> {
        for k in self.entries.keys() {
            let ok = known_prefixes.iter().any(|p| k == p || (p.ends_with('.') && k.starts_with(p)));
            if !ok {
                return Err(CliError::Config(format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }
}

pub fn split_list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}
