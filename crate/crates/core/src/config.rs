//! Line-based `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may appear at
//! most once. Each config type decides which keys it accepts; anything else
//! is an error so typos do not pass silently.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::data::SynthConfig;
use crate::error::{Error, Result};

/// Parses `text` into ordered `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::config(format!("line {}: empty key", n + 1)));
        }
        if pairs.iter().any(|(k, _)| k == key) {
            return Err(Error::config(format!("line {}: duplicate key `{key}`", n + 1)));
        }
        pairs.push((key.to_owned(), value.trim().to_owned()));
    }
    Ok(pairs)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text)
}

pub fn parse_value<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("`{key}`: cannot parse {value:?}: {e}")))
}

/// Types settable from configuration pairs.
pub trait Configurable {
    /// Applies one key. Unknown keys are an error.
    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<()> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }
}

impl Configurable for SynthConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = parse_value(key, value)?,
            "train_bags_per_class" => self.train_bags_per_class = parse_value(key, value)?,
            "test_bags_per_class" => self.test_bags_per_class = parse_value(key, value)?,
            "t_min" => self.t_min = parse_value(key, value)?,
            "t_max" => self.t_max = parse_value(key, value)?,
            "rho" => self.rho = parse_value(key, value)?,
            "normal_clusters" => self.normal_clusters = parse_value(key, value)?,
            "delta" => self.delta = parse_value(key, value)?,
            "sigma" => self.sigma = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            other => return Err(Error::config(format!("unknown synth config key `{other}`"))),
        }
        Ok(())
    }
}
