//! Flat `key = value` configuration text.
//!
//! One entry per line; `#` starts a comment; blank lines are ignored.
//! Duplicate and unknown keys are rejected.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KvFile {
    entries: BTreeMap<String, (String, usize)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(line_no, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::format(line_no, format!("invalid key `{key}`")));
            }
            if value.is_empty() {
                return Err(Error::format(line_no, format!("empty value for `{key}`")));
            }
            if entries
                .insert(key.to_string(), (value.to_string(), line_no))
                .is_some()
            {
                return Err(Error::format(line_no, format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { entries })
    }

    /// Removes and parses `key` if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::format(line, format!("bad value `{v}` for `{key}`: {e}"))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Fails on any key not consumed by `take`.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, (_, line))| *line) {
            None => Ok(()),
            Some((k, (_, line))) => Err(Error::format(line, format!("unknown key `{k}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let mut kv = KvFile::parse("# c\na = 1\n\nb=two # trailing\n").unwrap();
        assert_eq!(kv.take::<u32>("a").unwrap(), Some(1));
        assert_eq!(kv.take::<String>("b").unwrap().as_deref(), Some("two"));
        assert_eq!(kv.take_or("c", 5u8).unwrap(), 5);
        kv.finish().unwrap();

        assert!(KvFile::parse("a = 1\na = 2").is_err());
        assert!(KvFile::parse("novalue").is_err());
        assert!(KvFile::parse("a =").is_err());
        let kv = KvFile::parse("zzz = 1").unwrap();
        let err = kv.finish().unwrap_err();
        assert!(err.to_string().contains("zzz"));
        let mut kv = KvFile::parse("a = x").unwrap();
        assert!(kv.take::<f64>("a").is_err());
    }
}
