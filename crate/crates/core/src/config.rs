//! Plain-text `key=value` configuration files: one key per line, `#` starts a
//! comment, keys may repeat where a list is expected.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parsed configuration with per-key consumption tracking, so unknown keys
/// can be reported once every known key has been read.
#[derive(Debug, Default)]
pub struct KeyValues {
    entries: Vec<Entry>,
    used: RefCell<BTreeSet<String>>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(Error::Config {
                    line,
                    field: content.to_string(),
                    message: "expected key=value".into(),
                });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config { line, field: String::new(), message: "empty key".into() });
            }
            entries.push(Entry { line, key: key.to_string(), value: v.trim().to_string() });
        }
        Ok(Self { entries, used: RefCell::default() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    fn mark(&self, key: &str) {
        self.used.borrow_mut().insert(key.to_string());
    }

    /// Last occurrence of `key`.
    pub fn entry(&self, key: &str) -> Option<&Entry> {
        self.mark(key);
        self.entries.iter().rev().find(|e| e.key == key)
    }

    pub fn all(&self, key: &str) -> Vec<&Entry> {
        self.mark(key);
        self.entries.iter().filter(|e| e.key == key).collect()
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entry(key).map(|e| e.value.as_str())
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => parse_value(e).map(Some),
        }
    }

    pub fn get_or<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => list_values(e).map(Some),
        }
    }

    /// Rejects keys nobody asked for.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().find(|e| !used.contains(&e.key)) {
            None => Ok(()),
            Some(e) => Err(Error::Config {
                line: e.line,
                field: e.key.clone(),
                message: "unknown key".into(),
            }),
        }
    }
}

pub fn parse_value<V: FromStr>(e: &Entry) -> Result<V> {
    e.value.parse().map_err(|_| Error::Config {
        line: e.line,
        field: e.key.clone(),
        message: format!("cannot parse `{}`", e.value),
    })
}

pub fn list_values<V: FromStr>(e: &Entry) -> Result<Vec<V>> {
    if e.value.is_empty() {
        return Ok(Vec::new());
    }
    e.value
        .split(',')
        .map(|p| {
            p.trim().parse().map_err(|_| Error::Config {
                line: e.line,
                field: e.key.clone(),
                message: format!("cannot parse list item `{}`", p.trim()),
            })
        })
        .collect()
}

/// Builds an error pointing at the entry for `key`, or line 0 when absent.
pub fn field_error(kv: &KeyValues, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line: kv.entries.iter().rev().find(|e| e.key == key).map_or(0, |e| e.line),
        field: key.to_string(),
        message: message.into(),
    }
}

/// Formats a float like C's `%.17g`: 17 significant digits, trailing zeros
/// trimmed, exponent notation only for very small or large magnitudes.
pub fn fmt_g17(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}
