//! Real linear combinations of Pauli strings.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := [sign] (factor '*')* string
//! factor := [sign] number
//! string := n_sites letters from {I, X, Y, Z}
//! number := decimal literal, optional exponent (1, 0.5, .25, 2e-3)
//! ```
//!
//! Site order is left to right, matching tensor-product order.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::algebra::{pauli_matrix, tensor, ComplexMatrix, HermitianOperator};
use crate::error::{Error, Result};

pub const MAX_SITES: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl ParseError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        Self { offset, message: message.into() }
    }
}

/// Canonical form: strings sorted lexicographically, no duplicates, no zero coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliExpr {
    n_sites: usize,
    terms: Vec<(f64, String)>,
}

impl PauliExpr {
    pub fn from_terms<S: Into<String>>(
        n_sites: usize,
        terms: impl IntoIterator<Item = (f64, S)>,
    ) -> std::result::Result<Self, ParseError> {
        if n_sites == 0 {
            return Err(ParseError::new(0, "number of sites must be positive"));
        }
        let mut merged: BTreeMap<String, f64> = BTreeMap::new();
        for (c, s) in terms {
            let s = s.into();
            if s.len() != n_sites {
                return Err(ParseError::new(0, format!("string {s:?} has length {}, expected {n_sites}", s.len())));
            }
            if let Some(bad) = s.chars().find(|ch| !matches!(ch, 'I' | 'X' | 'Y' | 'Z')) {
                return Err(ParseError::new(0, format!("unknown letter {bad:?}")));
            }
            *merged.entry(s).or_insert(0.0) += c;
        }
        let terms = merged.into_iter().filter(|(_, c)| *c != 0.0).map(|(s, c)| (c, s)).collect();
        Ok(Self { n_sites, terms })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn terms(&self) -> &[(f64, String)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Sum of two expressions on the same number of sites.
    pub fn plus(&self, other: &Self) -> std::result::Result<Self, ParseError> {
        if self.n_sites != other.n_sites {
            return Err(ParseError::new(0, "site counts differ"));
        }
        Self::from_terms(self.n_sites, self.terms.iter().chain(&other.terms).map(|(c, s)| (*c, s.clone())))
    }
}

impl fmt::Display for PauliExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            // Parses back to the zero operator.
            return write!(f, "0*{}", "I".repeat(self.n_sites));
        }
        for (k, (c, s)) in self.terms.iter().enumerate() {
            let sign = if *c < 0.0 { "-" } else { "+" };
            match (k, sign) {
                (0, "-") => write!(f, "-")?,
                (0, _) => {}
                _ => write!(f, " {sign} ")?,
            }
            let mag = c.abs();
            if mag == 1.0 {
                write!(f, "{s}")?;
            } else {
                // `{:?}` is the shortest representation that parses back exactly.
                write!(f, "{mag:?}*{s}")?;
            }
        }
        Ok(())
    }
}

pub fn parse_pauli_expr(text: &str, n_sites: usize) -> std::result::Result<PauliExpr, ParseError> {
    if n_sites == 0 {
        return Err(ParseError::new(0, "number of sites must be positive"));
    }
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    p.skip_ws();
    if p.at_end() {
        return Err(ParseError::new(0, "empty expression"));
    }
    let mut raw: Vec<(f64, String)> = Vec::new();
    let mut sign = 1.0;
    loop {
        let (c, s) = p.term(n_sites)?;
        raw.push((sign * c, s));
        p.skip_ws();
        match p.peek() {
            None => break,
            Some(b'+') => sign = 1.0,
            Some(b'-') => sign = -1.0,
            Some(other) => {
                return Err(ParseError::new(p.pos, format!("expected '+' or '-', found {:?}", other as char)));
            }
        }
        p.pos += 1;
        p.skip_ws();
        if p.at_end() {
            return Err(ParseError::new(p.pos, "dangling operator at end of input"));
        }
    }
    PauliExpr::from_terms(n_sites, raw)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn term(&mut self, n_sites: usize) -> std::result::Result<(f64, String), ParseError> {
        let mut coeff = 1.0;
        match self.peek() {
            Some(b'+') => self.pos += 1,
            Some(b'-') => {
                coeff = -1.0;
                self.pos += 1;
            }
            _ => {}
        }
        self.skip_ws();
        while self.at_factor() {
            if self.peek() == Some(b'-') {
                coeff = -coeff;
            }
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            coeff *= self.number()?;
            self.skip_ws();
            if self.peek() != Some(b'*') {
                return Err(ParseError::new(self.pos, "expected '*' after coefficient"));
            }
            self.pos += 1;
            self.skip_ws();
        }
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_alphanumeric()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ParseError::new(start, "expected a Pauli string"));
        }
        let word = &self.src[start..self.pos];
        if let Some(k) = word.iter().position(|b| !matches!(b, b'I' | b'X' | b'Y' | b'Z')) {
            return Err(ParseError::new(start + k, format!("unknown letter {:?}", word[k] as char)));
        }
        if word.len() != n_sites {
            return Err(ParseError::new(
                start,
                format!("wrong string length: {} letters, expected {n_sites}", word.len()),
            ));
        }
        Ok((coeff, String::from_utf8(word.to_vec()).unwrap()))
    }

    /// Next token is a (possibly signed) coefficient.
    fn at_factor(&self) -> bool {
        let num = |b: Option<&u8>| b.is_some_and(|b| b.is_ascii_digit() || *b == b'.');
        match self.peek() {
            Some(b'+' | b'-') => num(self.src.get(self.pos + 1)),
            b => num(b.as_ref()),
        }
    }

    fn number(&mut self) -> std::result::Result<f64, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.peek().is_some_and(|b| b.is_ascii_digit()) {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut mantissa = digits(self);
        if self.peek() == Some(b'.') {
            self.pos += 1;
            mantissa += digits(self);
        }
        if mantissa == 0 {
            return Err(ParseError::new(start, "malformed number"));
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                return Err(ParseError::new(start, "malformed number: missing exponent digits"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value: f64 = text.parse().map_err(|_| ParseError::new(start, "malformed number"))?;
        if !value.is_finite() {
            return Err(ParseError::new(start, "number out of range"));
        }
        Ok(value)
    }
}

/// Dense matrix `sum_t c_t P_1 (x) ... (x) P_n`.
pub fn expr_to_matrix(e: &PauliExpr) -> Result<HermitianOperator> {
    let n = e.n_sites();
    let dim = 1usize << n.min(63);
    if n > MAX_SITES {
        return Err(Error::DimensionCap { n_sites: n, max_sites: MAX_SITES, dim });
    }
    let mut acc = ComplexMatrix::zeros(dim);
    for (c, s) in e.terms() {
        let mut chars = s.chars();
        let mut m = pauli_matrix(chars.next().unwrap());
        for ch in chars {
            m = tensor(&m, &pauli_matrix(ch));
        }
        acc = &acc + &m.scale_real(*c);
    }
    HermitianOperator::new(acc, e.to_string())
}
