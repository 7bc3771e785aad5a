//! `key = value` text used by configuration files, checkpoint headers and
//! run manifests. Blank lines and `#` comments are ignored.

use crate::error::{Error, Result};

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let k = k.trim().to_string();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if out.iter().any(|(e, _)| *e == k) {
            return Err(Error::Config(format!("duplicate key {k:?}")));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

pub fn render<K: AsRef<str>>(pairs: &[(K, String)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{} = {v}\n", k.as_ref()))
        .collect()
}

pub fn value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("invalid value {raw:?} for {key}")))
}

pub fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {raw:?} for {key}"))),
    }
}

/// A configuration that can be written as and rebuilt from key/value pairs.
pub trait KeyValue: Sized + Default {
    /// Every field, defaults included.
    fn pairs(&self) -> Vec<(String, String)>;

    /// Sets one field; returns `Ok(false)` for keys this type does not own.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;

    fn to_text(&self) -> String {
        render(&self.pairs())
    }

    fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a (String, String)>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            if !cfg.set(k, v)? {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
        }
        Ok(cfg)
    }
}
