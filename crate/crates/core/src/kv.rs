//! Flat `key = value` text used by configs, sidecars and manifests.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::{Error, Result};

/// Ordered key/value pairs; `#` starts a comment line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key=value", lineno + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KeyValues { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Format(format!("cannot parse value '{v}' for key '{key}'"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Format(format!("missing key '{key}'")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in other.iter() {
            self.entries.insert(k.to_string(), v.to_string());
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print() {
        let kv = KeyValues::parse("# comment\n a = 1\nb=x y \n\n").unwrap();
        assert_eq!(kv.require::<i32>("a").unwrap(), 1);
        assert_eq!(kv.get_str("b"), Some("x y"));
        assert!(kv.require::<i32>("c").is_err());
        assert!(kv.require::<i32>("b").is_err());
        assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
        assert!(KeyValues::parse("novalue").is_err());
    }

    #[test]
    fn floats_round_trip_exactly() {
        let mut kv = KeyValues::new();
        let x = 0.1f64 + 0.2;
        kv.set("x", x);
        let back = KeyValues::parse(&kv.to_text()).unwrap();
        assert_eq!(back.require::<f64>("x").unwrap().to_bits(), x.to_bits());
    }
}
