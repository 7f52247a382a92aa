//! Flat `key = value` configuration files.
//!
//! Lines are `section.key = value`; `#` starts a comment; blank lines are
//! ignored. Lists are comma-separated and may be empty. Every key in a file
//! must be read by the command that consumes it, so a misspelled key is an
//! error instead of a silently ignored setting.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {message}")]
    Syntax { source_name: String, line: usize, message: String },
    #[error("{key}: {message}")]
    Value { key: String, message: String },
    #[error("unknown config key(s): {}", .0.join(", "))]
    Unknown(Vec<String>),
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug)]
pub struct Config {
    source_name: String,
    entries: BTreeMap<String, Entry>,
    /// Every key looked up, with the value in effect (defaults included).
    resolved: RefCell<BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str, source_name: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let syntax = |message: String| ConfigError::Syntax { source_name: source_name.to_string(), line, message };
            let (key, value) = content.split_once('=').ok_or_else(|| syntax("expected `key = value`".into()))?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                return Err(syntax(format!("invalid key `{key}`")));
            }
            let entry = Entry { value: value.trim().to_string(), line };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(syntax(format!("`{key}` already set on line {}", prev.line)));
            }
        }
        Ok(Self { source_name: source_name.to_string(), entries, resolved: RefCell::new(BTreeMap::new()) })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    /// Overrides or adds a key, as a command-line flag would.
    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.insert(key.to_string(), Entry { value: value.to_string(), line: 0 });
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn record(&self, key: &str, value: String) {
        self.resolved.borrow_mut().insert(key.to_string(), value);
    }

    fn parse_value<T: FromStr>(key: &str, s: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        s.parse::<T>().map_err(|e| ConfigError::Value { key: key.to_string(), message: format!("`{s}`: {e}") })
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let v = match self.raw(key) {
            Some(s) => Self::parse_value(key, s)?,
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        self.opt_or(key, None)
    }

    /// Like [`get_opt`](Self::get_opt) with a default for an absent key;
    /// an empty value or `none` gives `None`.
    pub fn opt_or<T>(&self, key: &str, default: Option<T>) -> Result<Option<T>, ConfigError>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let v = match self.raw(key) {
            Some(s) if !s.is_empty() && s != "none" => Some(Self::parse_value(key, s)?),
            Some(_) => None,
            None => default,
        };
        self.record(key, v.as_ref().map_or_else(|| "none".to_string(), |v| v.to_string()));
        Ok(v)
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        let v = self.raw(key).unwrap_or(default).to_string();
        self.record(key, v.clone());
        v
    }

    pub fn list_or<T>(&self, key: &str, default: &[T]) -> Result<Vec<T>, ConfigError>
    where
        T: FromStr + fmt::Display + Clone,
        T::Err: fmt::Display,
    {
        let v = match self.raw(key) {
            Some(s) => s
                .split(',')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(|p| Self::parse_value(key, p))
                .collect::<Result<Vec<T>, _>>()?,
            None => default.to_vec(),
        };
        self.record(key, v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        Ok(v)
    }

    pub fn value_error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Value { key: key.to_string(), message: message.into() }
    }

    /// Fails if any key in the file was never read.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let resolved = self.resolved.borrow();
        let unknown: Vec<String> = self.entries.keys().filter(|k| !resolved.contains_key(*k)).cloned().collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Unknown(unknown))
        }
    }

    /// Canonical `key=value;...` of every setting read so far.
    pub fn fingerprint(&self) -> String {
        self.resolved.borrow().iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }
}
