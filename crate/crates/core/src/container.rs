//! Versioned file container shared by checkpoints, transform files and
//! dataset caches: a textual header followed by raw little-endian `f64`s.
//!
//! ```text
//! WDMDIFF <kind> 1
//! key = value
//! ...
//! ---
//! <payload bytes>
//! ```

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::field::C64;

pub const MAGIC: &str = "WDMDIFF";
pub const FORMAT_VERSION: u32 = 1;
const END_OF_HEADER: &str = "---";

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub header: Vec<(String, String)>,
    pub payload: Vec<f64>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            header: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        debug_assert!(!value.contains('\n'));
        self.header.push((key.to_string(), value));
        self
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("{} file is missing header field `{key}`", self.kind)))
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.header
            .iter()
            .filter(move |(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("{} header field `{key}` has invalid value {raw:?}", self.kind)))
    }

    pub fn push_complex(&mut self, values: &[C64]) {
        self.payload.reserve(values.len() * 2);
        for v in values {
            self.payload.push(v.re);
            self.payload.push(v.im);
        }
    }

    pub fn complex_payload(&self) -> Result<Vec<C64>> {
        if !self.payload.len().is_multiple_of(2) {
            return Err(Error::Format("complex payload has an odd number of floats".into()));
        }
        Ok(self.payload.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{MAGIC} {} {FORMAT_VERSION}", self.kind)?;
        for (k, v) in &self.header {
            writeln!(w, "{k} = {v}")?;
        }
        writeln!(w, "{END_OF_HEADER}")?;
        let mut bytes = Vec::with_capacity(self.payload.len() * 8);
        for x in &self.payload {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_from(r: impl Read, expected_kind: &str) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(Error::Format("not a WDMDIFF file".into()));
        }
        let kind = parts.next().unwrap_or_default().to_string();
        if kind != expected_kind {
            return Err(Error::Format(format!(
                "expected a {expected_kind} file, found {kind:?}"
            )));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format("missing format version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let mut header = Vec::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format("header is not terminated".into()));
            }
            let entry = line.trim_end_matches(['\n', '\r']);
            if entry == END_OF_HEADER {
                break;
            }
            let (k, v) = entry
                .split_once(" = ")
                .ok_or_else(|| Error::Format(format!("malformed header line {entry:?}")))?;
            header.push((k.to_string(), v.to_string()));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Format("payload length is not a multiple of 8 bytes".into()));
        }
        let payload = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self { kind, header, payload })
    }
}
