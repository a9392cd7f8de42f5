//! Comma-separated geometry facts such as
//! `Triangle(A, B, C), Angle(BAC, 45), Line(AB, 5)`.
//!
//! ```text
//! fact_list := fact (',' fact)* | ε
//! fact      := IDENT '(' arg (',' arg)* ')'
//! arg       := IDENT | NUMBER
//! IDENT     := [A-Za-z][A-Za-z0-9_]*
//! NUMBER    := [0-9]+ ('.' [0-9]+)?
//! ```
//!
//! Whitespace between tokens is ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A non-negative decimal kept in canonical form: no leading zeros in the
/// integer part, no trailing zeros in the fraction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Decimal {
    int_part: String,
    frac_part: String,
}

impl Decimal {
    /// Accepts `digits` or `digits.digits`.
    pub fn parse(text: &str) -> Option<Self> {
        let (int_part, frac_part) = match text.split_once('.') {
            Some((i, f)) if !f.is_empty() => (i, f),
            Some(_) => return None,
            None => (text, ""),
        };
        if int_part.is_empty() || !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
            return None;
        }
        let int_part = int_part.trim_start_matches('0');
        Some(Self {
            int_part: if int_part.is_empty() { "0".into() } else { int_part.into() },
            frac_part: frac_part.trim_end_matches('0').into(),
        })
    }

    pub fn from_u64(v: u64) -> Self {
        Self { int_part: v.to_string(), frac_part: String::new() }
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.frac_part.is_empty() {
            f.write_str(&self.int_part)
        } else {
            write!(f, "{}.{}", self.int_part, self.frac_part)
        }
    }
}

impl From<Decimal> for String {
    fn from(d: Decimal) -> Self {
        d.to_string()
    }
}

impl TryFrom<String> for Decimal {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Decimal::parse(&s).ok_or_else(|| format!("not a decimal: {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arg {
    Symbol(String),
    Number(Decimal),
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Symbol(s) => f.write_str(s),
            Arg::Number(n) => n.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeometryFact {
    pub predicate: String,
    pub args: Vec<Arg>,
}

impl GeometryFact {
    pub fn new(predicate: impl Into<String>, args: Vec<Arg>) -> Self {
        Self { predicate: predicate.into(), args }
    }
}

impl fmt::Display for GeometryFact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            a.fmt(f)?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactList {
    pub facts: Vec<GeometryFact>,
}

impl FactList {
    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }
}

impl fmt::Display for FactList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_facts(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expected {
    Ident,
    Number,
    OpenParen,
    CloseParen,
    Comma,
    End,
}

impl fmt::Display for Expected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Expected::Ident => "identifier",
            Expected::Number => "number",
            Expected::OpenParen => "'('",
            Expected::CloseParen => "')'",
            Expected::Comma => "','",
            Expected::End => "end of input",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: expected {}, found {}", fmt_expected(.expected), fmt_found(.found))]
pub struct ParseError {
    pub offset: usize,
    pub expected: Vec<Expected>,
    pub found: Option<char>,
}

fn fmt_expected(e: &[Expected]) -> String {
    e.iter().map(ToString::to_string).collect::<Vec<_>>().join(" or ")
}

fn fmt_found(c: &Option<char>) -> String {
    c.map_or_else(|| "end of input".to_string(), |c| format!("{c:?}"))
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn fail<T>(&self, expected: &[Expected]) -> Result<T, ParseError> {
        Err(ParseError { offset: self.pos, expected: expected.to_vec(), found: self.peek() })
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> &'a str {
        let start = self.pos;
        let rest = &self.src[start..];
        let len = rest.find(|c: char| !pred(c)).unwrap_or(rest.len());
        self.pos += len;
        &self.src[start..start + len]
    }

    fn ident(&mut self) -> Option<&'a str> {
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() => {
                Some(self.take_while(|c| c.is_ascii_alphanumeric() || c == '_'))
            }
            _ => None,
        }
    }

    fn number(&mut self) -> Result<Option<Decimal>, ParseError> {
        if !self.peek().is_some_and(|c| c.is_ascii_digit()) {
            return Ok(None);
        }
        let start = self.pos;
        self.take_while(|c| c.is_ascii_digit());
        if self.peek() == Some('.') {
            self.pos += 1;
            if self.take_while(|c| c.is_ascii_digit()).is_empty() {
                return self.fail(&[Expected::Number]);
            }
        }
        Ok(Decimal::parse(&self.src[start..self.pos]))
    }

    fn expect(&mut self, c: char, token: Expected, alternatives: &[Expected]) -> Result<(), ParseError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            let mut expected = vec![token];
            expected.extend_from_slice(alternatives);
            self.fail(&expected)
        }
    }

    fn arg(&mut self) -> Result<Arg, ParseError> {
        self.skip_ws();
        if let Some(id) = self.ident() {
            return Ok(Arg::Symbol(id.to_string()));
        }
        if let Some(n) = self.number()? {
            return Ok(Arg::Number(n));
        }
        self.fail(&[Expected::Ident, Expected::Number])
    }

    fn fact(&mut self) -> Result<GeometryFact, ParseError> {
        self.skip_ws();
        let Some(predicate) = self.ident() else {
            return self.fail(&[Expected::Ident]);
        };
        self.expect('(', Expected::OpenParen, &[])?;
        let mut args = vec![self.arg()?];
        loop {
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.pos += 1;
                    args.push(self.arg()?);
                }
                Some(')') => {
                    self.pos += 1;
                    return Ok(GeometryFact { predicate: predicate.to_string(), args });
                }
                _ => return self.fail(&[Expected::Comma, Expected::CloseParen]),
            }
        }
    }
}

pub fn parse_facts(text: &str) -> Result<FactList, ParseError> {
    let mut p = Parser { src: text, pos: 0 };
    let mut facts = Vec::new();
    p.skip_ws();
    if p.peek().is_none() {
        return Ok(FactList { facts });
    }
    facts.push(p.fact()?);
    loop {
        p.skip_ws();
        match p.peek() {
            None => return Ok(FactList { facts }),
            Some(',') => {
                p.pos += 1;
                facts.push(p.fact()?);
            }
            Some(_) => return p.fail(&[Expected::Comma, Expected::End]),
        }
    }
}

/// Canonical rendering: `Pred(a, b), Pred(c)`.
pub fn serialize_facts(facts: &FactList) -> String {
    facts.facts.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// Predicate name → required argument count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArityTable(pub BTreeMap<String, usize>);

impl Default for ArityTable {
    fn default() -> Self {
        Self(
            [
                ("Triangle", 3),
                ("Angle", 2),
                ("Line", 2),
                ("Circle", 2),
                ("Point", 1),
                ("Parallel", 2),
                ("Perpendicular", 2),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        )
    }
}

#[derive(Debug, Error)]
pub enum ArityTableError {
    #[error("cannot read arity table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid arity table {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl ArityTable {
    /// Reads a JSON object `{predicate: arity}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ArityTableError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ArityTableError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text)
            .map_err(|source| ArityTableError::Json { path: path.display().to_string(), source })
    }

    pub fn arity(&self, predicate: &str) -> Option<usize> {
        self.0.get(predicate).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArityViolation {
    pub index: usize,
    pub predicate: String,
    pub expected: usize,
    pub actual: usize,
}

/// Facts whose predicate is in the table but whose argument count differs.
pub fn validate_arity(facts: &FactList, table: &ArityTable) -> Vec<ArityViolation> {
    facts
        .facts
        .iter()
        .enumerate()
        .filter_map(|(index, f)| {
            let expected = table.arity(&f.predicate)?;
            (expected != f.args.len()).then(|| ArityViolation {
                index,
                predicate: f.predicate.clone(),
                expected,
                actual: f.args.len(),
            })
        })
        .collect()
}
