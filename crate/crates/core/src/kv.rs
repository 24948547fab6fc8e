//! Flat `key = value` text used by model and training config files.

use crate::error::{Error, Result};

/// Parses one `key = value` pair per line. Blank lines and lines starting
/// with `#` are skipped; keys must be unique.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Typed lookup over parsed pairs that tracks which keys were consumed.
pub struct KvReader {
    pairs: Vec<(String, String)>,
    used: Vec<bool>,
}

impl KvReader {
    pub fn new(text: &str) -> Result<Self> {
        let pairs = parse_kv(text)?;
        let used = vec![false; pairs.len()];
        Ok(Self { pairs, used })
    }

    pub fn raw(&mut self, key: &str) -> Option<String> {
        let i = self.pairs.iter().position(|(k, _)| k == key)?;
        self.used[i] = true;
        Some(self.pairs[i].1.clone())
    }

    pub fn required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self
            .raw(key)
            .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))?;
        v.parse()
            .map_err(|_| Error::Config(format!("key {key:?}: cannot parse {v:?}")))
    }

    pub fn optional<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("key {key:?}: cannot parse {v:?}"))),
        }
    }

    /// Fails on any key that was never looked up.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<&str> = self
            .pairs
            .iter()
            .zip(&self.used)
            .filter(|(_, &u)| !u)
            .map(|((k, _), _)| k.as_str())
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_tracks_unknown() {
        let mut r = KvReader::new("# c\n a = 1\n\nb=x y\n").unwrap();
        assert_eq!(r.required::<u32>("a").unwrap(), 1);
        assert!(r.finish().unwrap_err().to_string().contains('b'));
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(parse_kv("a=1\na=2").is_err());
        assert!(parse_kv("nonsense").is_err());
    }
}
