//! Canonical line-oriented text encoding shared by certificates, chain records,
//! enrollment records and consensus transcripts.
//!
//! Each line is `key value...` separated by single spaces. Floats are written
//! in scientific notation with 17 significant digits, which round-trips every
//! `f64` exactly, so a decoded-then-encoded document is byte-identical to the
//! original.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Renders `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders `x` with `digits` significant digits for human-facing output.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

#[derive(Default)]
pub struct TextWriter {
    buf: String,
}

impl TextWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn line(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.buf, "{key} {value}");
        self
    }

    pub fn float(&mut self, key: &str, value: f64) -> &mut Self {
        self.line(key, fmt_f64(value))
    }

    pub fn raw(&mut self, text: &str) -> &mut Self {
        self.buf.push_str(text);
        self
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

/// Cursor over the lines of a canonical document.
pub struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    what: &'static str,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    pub fn new(text: &'a str, what: &'static str) -> Self {
        Self {
            lines: text.lines(),
            what,
            line_no: 0,
        }
    }

    pub fn err(&self, detail: impl std::fmt::Display) -> Error {
        Error::malformed(self.what, format!("line {}: {detail}", self.line_no))
    }

    pub fn next_line(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.lines.next().ok_or_else(|| self.err("unexpected end"))
    }

    /// Reads a line that must start with `key` and returns the remainder.
    pub fn expect(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest),
            _ if line == key => Ok(""),
            _ => Err(self.err(format!("expected `{key}`, found `{line}`"))),
        }
    }

    pub fn parse<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let rest = self.expect(key)?;
        rest.parse()
            .map_err(|_| self.err(format!("bad value for `{key}`: `{rest}`")))
    }

    pub fn fields(&mut self, key: &str, count: usize) -> Result<Vec<&'a str>> {
        let rest = self.expect(key)?;
        let fields: Vec<&str> = rest.split(' ').collect();
        if fields.len() != count {
            return Err(self.err(format!("`{key}` expects {count} fields")));
        }
        Ok(fields)
    }

    pub fn parse_field<T: FromStr>(&self, field: &str) -> Result<T> {
        field
            .parse()
            .map_err(|_| self.err(format!("bad field `{field}`")))
    }

    pub fn finish(mut self) -> Result<()> {
        match self.lines.next() {
            None => Ok(()),
            Some(extra) => {
                self.line_no += 1;
                Err(self.err(format!("trailing content `{extra}`")))
            }
        }
    }
}

/// Escapes spaces, newlines and backslashes so free text fits in one field.
pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    if out.is_empty() {
        out.push_str("\\0");
    }
    out
}

pub fn unescape(s: &str) -> Result<String> {
    if s == "\\0" {
        return Ok(String::new());
    }
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('s') => out.push(' '),
            Some('n') => out.push('\n'),
            _ => return Err(Error::malformed("text", format!("bad escape in `{s}`"))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn float_has_17_significant_digits() {
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
        assert_eq!(fmt_f64(1.0 / 3.0), "3.3333333333333331e-1");
    }

    #[test]
    fn human_format() {
        assert_eq!(fmt_sig(0.5773502691896258, 6), "0.577350");
        assert_eq!(fmt_sig(66.02059991327962, 6), "66.0206");
        assert_eq!(fmt_sig(210000.0, 6), "210000");
    }

    proptest! {
        #[test]
        fn floats_round_trip_exactly(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back: f64 = fmt_f64(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }

        #[test]
        fn escape_round_trips(s in ".*") {
            let e = escape(&s);
            prop_assert!(!e.contains(' ') && !e.contains('\n'));
            prop_assert_eq!(unescape(&e).unwrap(), s);
        }
    }
}
