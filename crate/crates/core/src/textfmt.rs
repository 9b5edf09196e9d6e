//! Line-oriented `key=value` text records.
//!
//! ```text
//! #format wsty-<kind> 1
//! <record>\tkey=value\tkey=value
//! ```
//!
//! Blank lines and lines starting with `#` after the header are ignored.
//! Values escape `\`, tab and newline as `\\`, `\t`, `\n`.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub tag: String,
    pub fields: Vec<(String, String)>,
    /// 1-based source line, 0 when built in memory.
    pub line: usize,
}

impl Record {
    pub fn new(tag: impl Into<String>) -> Self {
        Self { tag: tag.into(), fields: Vec::new(), line: 0 }
    }

    pub fn with(mut self, key: &str, value: impl Display) -> Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Parse { line: self.line, msg: format!("`{}` record lacks `{key}`", self.tag) })
    }

    pub fn parse<V: FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| Error::Parse { line: self.line, msg: format!("bad value `{raw}` for `{key}`") })
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape(s: &str, line: usize) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match it.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            other => return Err(Error::Parse { line, msg: format!("bad escape `\\{}`", other.map(String::from).unwrap_or_default()) }),
        }
    }
    Ok(out)
}

pub fn header(kind: &str) -> String {
    format!("#format wsty-{kind} {VERSION}")
}

pub fn write(kind: &str, records: &[Record]) -> String {
    let mut out = header(kind);
    out.push('\n');
    for r in records {
        out.push_str(&escape(&r.tag));
        for (k, v) in &r.fields {
            out.push('\t');
            out.push_str(&escape(k));
            out.push('=');
            out.push_str(&escape(v));
        }
        out.push('\n');
    }
    out
}

pub fn parse(kind: &str, text: &str) -> Result<Vec<Record>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == header(kind) => {}
        Some((_, h)) => return Err(Error::Parse { line: 1, msg: format!("expected `{}`, found `{h}`", header(kind)) }),
        None => return Err(Error::Parse { line: 1, msg: "empty document".into() }),
    }
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut parts = raw.split('\t');
        let tag = unescape(parts.next().unwrap_or_default(), line)?;
        let mut fields = Vec::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| Error::Parse { line, msg: format!("field `{p}` lacks `=`") })?;
            fields.push((unescape(k, line)?, unescape(v, line)?));
        }
        out.push(Record { tag, fields, line });
    }
    Ok(out)
}
