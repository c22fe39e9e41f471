//! Parser for the `key=value` config files used by the CLI.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Parses key=value text into an ordered map. Duplicate keys are rejected.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if out.contains_key(&key) {
            return Err(Error::Config(format!("duplicate key `{key}`")));
        }
        out.insert(key, value);
    }
    Ok(out)
}

/// Helper for consuming a parsed map field by field; `finish` rejects
/// unknown keys so config typos fail loudly.
pub struct KvReader {
    map: BTreeMap<String, String>,
}

impl KvReader {
    pub fn from_text(text: &str) -> Result<Self> {
        Ok(Self { map: parse(text)? })
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    pub fn parse_field<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value `{v}` for key `{key}`"))),
        }
    }

    /// Comma-separated list, e.g. `lr_milestones=0.4,0.8`.
    pub fn parse_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|part| {
                    part.trim().parse::<T>().map_err(|_| {
                        Error::Config(format!("invalid list element `{part}` for key `{key}`"))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Inclusive `lo,hi` pair, e.g. `modes_per_class=2,3`.
    pub fn parse_range(&mut self, key: &str) -> Result<Option<(u32, u32)>> {
        match self.parse_list::<u32>(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 && v[0] <= v[1] => Ok(Some((v[0], v[1]))),
            Some(_) => Err(Error::Config(format!(
                "key `{key}` expects an inclusive range `lo,hi` with lo <= hi"
            ))),
        }
    }

    pub fn finish(self) -> Result<()> {
        if let Some(key) = self.map.keys().next() {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let map = parse("a=1\n\n# comment\nb = two # trailing\n").unwrap();
        assert_eq!(map.get("a").unwrap(), "1");
        assert_eq!(map.get("b").unwrap(), "two");
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(parse("a=1\na=2").is_err());
        assert!(parse("not an assignment").is_err());
    }

    #[test]
    fn reader_rejects_unknown_keys() {
        let mut r = KvReader::from_text("a=1\nb=2").unwrap();
        assert_eq!(r.parse_field::<u32>("a").unwrap(), Some(1));
        assert!(r.finish().is_err());
    }
}
