//! CSV artifacts.
//!
//! Every file starts with a schema-version comment line so downstream
//! plotting can detect format drift; consumers should select columns by
//! header name, never by position.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

pub const SCHEMA_COMMENT: &str = "# beliefplan csv v1";

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut file = File::create(path)?;
    writeln!(file, "{SCHEMA_COMMENT}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()
}

/// Measured quantities: shortest decimal form that round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Grid coordinates (k, alpha, exponents, belief-summary axes): at most six
/// decimals, trailing zeros trimmed. Keeps axis labels readable without the
/// long binary-fraction tails of exact printing.
pub fn fmt_axis(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}
