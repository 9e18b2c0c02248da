// SPDX-License-Identifier: Apache-2.0

//! Set and value files.
//!
//! Set files hold one element per line, either integers (decimal or
//! `0x`-prefixed hex) or arbitrary strings. Strings are hashed to the
//! plan's element bitlength. Value files are tab-separated
//! `element<TAB>value` lines using the same element syntax. Blank lines are
//! skipped.

use std::collections::{HashMap, HashSet};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::protocol::PsiParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ElementFormat {
    /// Integers of at most `λ` bits.
    #[default]
    Integer,
    /// Byte strings, hashed to `λ` bits.
    String,
}

impl FromStr for ElementFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "int" | "integer" => Ok(ElementFormat::Integer),
            "string" | "str" => Ok(ElementFormat::String),
            other => Err(Error::InvalidParams(format!(
                "unknown element format {other:?}"
            ))),
        }
    }
}

/// Parses a decimal or `0x`-prefixed hexadecimal integer.
pub fn parse_u64(s: &str) -> Result<u64> {
    let s = s.trim();
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|_| Error::Malformed(format!("not an integer: {s:?}")))
}

pub fn parse_element(token: &str, format: ElementFormat, params: &PsiParams) -> Result<u64> {
    match format {
        ElementFormat::Integer => {
            let x = parse_u64(token)?;
            params.binning.check_element(x)?;
            Ok(x)
        }
        ElementFormat::String => Ok(params.hash_element(token.as_bytes())),
    }
}

fn lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .filter(|l| !l.trim().is_empty())
}

/// Elements of a set file, in file order. Repeated lines are dropped;
/// distinct strings that hash alike are reported as duplicates.
pub fn read_elements(text: &str, format: ElementFormat, params: &PsiParams) -> Result<Vec<u64>> {
    let mut seen_lines = HashSet::new();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in lines(text) {
        let token = match format {
            ElementFormat::Integer => line.trim(),
            ElementFormat::String => line,
        };
        if !seen_lines.insert(token) {
            continue;
        }
        let x = parse_element(token, format, params)?;
        if !seen.insert(x) {
            return Err(Error::DuplicateElement(x));
        }
        out.push(x);
    }
    Ok(out)
}

/// `element → raw value` from a tab-separated file.
pub fn read_value_map(
    text: &str,
    format: ElementFormat,
    params: &PsiParams,
) -> Result<HashMap<u64, String>> {
    let mut out = HashMap::new();
    for (n, line) in lines(text).enumerate() {
        let (elem, value) = line.split_once('\t').ok_or_else(|| {
            Error::Malformed(format!("line {}: expected element<TAB>value", n + 1))
        })?;
        let x = parse_element(elem, format, params)?;
        if out.insert(x, value.trim().to_string()).is_some() {
            return Err(Error::DuplicateElement(x));
        }
    }
    Ok(out)
}

/// Integer values aligned with `elements`, each below `t`.
pub fn align_values(
    elements: &[u64],
    map: &HashMap<u64, String>,
    params: &PsiParams,
) -> Result<Vec<u64>> {
    let t = params.he.t().value();
    elements
        .iter()
        .map(|x| {
            let raw = map
                .get(x)
                .ok_or_else(|| Error::Malformed(format!("no value for element {x:#x}")))?;
            let v = parse_u64(raw)?;
            if v >= t {
                return Err(Error::InvalidValue(v));
            }
            Ok(v)
        })
        .collect()
}

/// Hex byte labels aligned with `elements`; all must share one length.
pub fn align_byte_labels(
    elements: &[u64],
    map: &HashMap<u64, String>,
) -> Result<(usize, Vec<Vec<u8>>)> {
    let labels = elements
        .iter()
        .map(|x| {
            let raw = map
                .get(x)
                .ok_or_else(|| Error::Malformed(format!("no label for element {x:#x}")))?;
            parse_hex(raw)
        })
        .collect::<Result<Vec<_>>>()?;
    let len = labels.first().map_or(0, Vec::len);
    if labels.iter().any(|l| l.len() != len) {
        return Err(Error::Malformed("byte labels differ in length".into()));
    }
    Ok((len, labels))
}

pub fn parse_hex(s: &str) -> Result<Vec<u8>> {
    let s = s.trim();
    let s = s.strip_prefix("0x").unwrap_or(s);
    if !s.len().is_multiple_of(2) {
        return Err(Error::Malformed(format!("odd-length hex {s:?}")));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&s[i..i + 2], 16)
                .map_err(|_| Error::Malformed(format!("bad hex {s:?}")))
        })
        .collect()
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
