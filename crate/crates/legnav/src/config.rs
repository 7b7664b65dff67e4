//! Line-oriented `key = value...` config files.
//!
//! Shared parser for `shape.cfg`, `planner.cfg` and `.scn` scenario files.
//! Lines are `key = v1 v2 ...`; `#` starts a comment; keys may repeat.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`")]
    MissingEquals { line: usize },
    #[error("line {line}: key `{key}`: {msg}")]
    BadValue {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("unknown key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },
}

/// One `key = values` entry with its source line for error reporting.
#[derive(Debug, Clone)]
pub struct Entry {
    pub key: String,
    pub values: Vec<String>,
    pub line: usize,
}

impl Entry {
    pub fn require_len(&self, n: usize) -> Result<(), ConfigError> {
        if self.values.len() != n {
            return Err(self.err(format!("expected {n} values, got {}", self.values.len())));
        }
        Ok(())
    }

    pub fn f64(&self, idx: usize) -> Result<f64, ConfigError> {
        let raw = self
            .values
            .get(idx)
            .ok_or_else(|| self.err(format!("missing value {idx}")))?;
        raw.parse::<f64>()
            .map_err(|_| self.err(format!("`{raw}` is not a number")))
    }

    pub fn usize(&self, idx: usize) -> Result<usize, ConfigError> {
        let raw = self
            .values
            .get(idx)
            .ok_or_else(|| self.err(format!("missing value {idx}")))?;
        raw.parse::<usize>()
            .map_err(|_| self.err(format!("`{raw}` is not an integer")))
    }

    pub fn str(&self, idx: usize) -> Result<&str, ConfigError> {
        self.values
            .get(idx)
            .map(String::as_str)
            .ok_or_else(|| self.err(format!("missing value {idx}")))
    }

    /// Whole value list re-joined (for path-like values containing spaces we
    /// keep the raw split; paths with spaces are not supported).
    pub fn joined(&self) -> String {
        self.values.join(" ")
    }

    pub fn on_off(&self, idx: usize) -> Result<bool, ConfigError> {
        match self.str(idx)? {
            "on" | "true" | "1" => Ok(true),
            "off" | "false" | "0" => Ok(false),
            other => Err(self.err(format!("`{other}` is not on|off"))),
        }
    }

    pub fn err(&self, msg: impl Into<String>) -> ConfigError {
        ConfigError::BadValue {
            line: self.line,
            key: self.key.clone(),
            msg: msg.into(),
        }
    }
}

/// Parse config text into entries, preserving order and duplicates.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let stripped = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let stripped = stripped.trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, rest) = stripped
            .split_once('=')
            .ok_or(ConfigError::MissingEquals { line })?;
        out.push(Entry {
            key: key.trim().to_string(),
            values: rest.split_whitespace().map(str::to_string).collect(),
            line,
        });
    }
    Ok(out)
}

pub fn load_entries(path: &Path) -> Result<Vec<Entry>, ConfigError> {
    parse_entries(&fs::read_to_string(path)?)
}
