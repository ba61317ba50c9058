//! Flat `key = value` configuration documents with section-prefixed keys
//! (`train.lr`, `bank.classes`, ...). The same encoding serves experiment
//! config files, resolved-config records written next to outputs, and
//! checkpoint headers. Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Doc {
    /// Insertion-ordered (key, value) pairs.
    pairs: Vec<(String, String)>,
    index: BTreeMap<String, usize>,
}

impl Doc {
    pub fn new() -> Self {
        Doc::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Doc::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1))
            })?;
            doc.set(key.trim(), value.trim());
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.index.get(key) {
            Some(&i) => self.pairs[i].1 = value,
            None => {
                self.index.insert(key.to_string(), self.pairs.len());
                self.pairs.push((key.to_string(), value));
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.index.get(key).map(|&i| self.pairs[i].1.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    pub fn get_parse<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value for `{key}`: `{v}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get_parse(key)?.unwrap_or(default))
    }

    pub fn require_parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("bad value for `{key}`: `{v}`")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|(k, _)| k.as_str())
    }

    /// Keys sorted, values verbatim; deterministic for rerun comparisons.
    pub fn to_text(&self) -> String {
        let mut sorted: Vec<&(String, String)> = self.pairs.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out = String::new();
        for (k, v) in sorted {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Apply `key=value` override strings (CLI `--set`).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override must be key=value, got `{o}`")))?;
            self.set(k.trim(), v.trim());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip_is_stable() {
        let text = "b.two = 2\na.one = hello\n# comment\n\nc.pi = 3.14\n";
        let doc = Doc::parse(text).unwrap();
        assert_eq!(doc.get("a.one"), Some("hello"));
        assert_eq!(doc.get_parse::<f64>("c.pi").unwrap(), Some(3.14));
        let rendered = doc.to_text();
        let again = Doc::parse(&rendered).unwrap();
        assert_eq!(again.to_text(), rendered);
    }

    #[test]
    fn overrides_and_errors() {
        let mut doc = Doc::parse("x = 1").unwrap();
        doc.apply_overrides(&["x=2".to_string(), "y.z=3".to_string()]).unwrap();
        assert_eq!(doc.get("x"), Some("2"));
        assert_eq!(doc.get("y.z"), Some("3"));
        assert!(doc.apply_overrides(&["nonsense".to_string()]).is_err());
        assert!(Doc::parse("just a line").is_err());
        assert!(doc.get_parse::<u64>("y.z").unwrap() == Some(3));
        assert!(doc.require("missing").is_err());
    }
}
