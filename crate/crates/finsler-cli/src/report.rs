//! Report rendering: flat TOML-compatible key-value documents and CSV
//! tables, with all floats at 17 significant digits so identical runs
//! produce identical bytes.

use std::fmt::Write as _;

/// 17 significant digits round-trips every f64.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// A precondition of the task does not hold for this metric (for
    /// example a Berwald-only check on a non-Berwald spec).
    Degenerate,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Degenerate => "degenerate",
        }
    }

    pub fn passed(self) -> bool {
        self == Status::Pass
    }
}

/// Key-value document builder. Keys keep insertion order; the caller is
/// responsible for emitting each key once per section.
#[derive(Debug, Default)]
pub struct Doc {
    text: String,
}

impl Doc {
    pub fn new() -> Doc {
        Doc::default()
    }

    pub fn str(&mut self, key: &str, value: &str) {
        writeln!(self.text, "{key} = {:?}", value).unwrap();
    }

    pub fn usize(&mut self, key: &str, value: usize) {
        writeln!(self.text, "{key} = {value}").unwrap();
    }

    pub fn bool(&mut self, key: &str, value: bool) {
        writeln!(self.text, "{key} = {value}").unwrap();
    }

    pub fn float(&mut self, key: &str, value: f64) {
        writeln!(self.text, "{key} = {:?}", float(value)).unwrap();
    }

    pub fn floats(&mut self, key: &str, values: &[f64]) {
        let items: Vec<String> = values.iter().map(|v| format!("{:?}", float(*v))).collect();
        writeln!(self.text, "{key} = [{}]", items.join(", ")).unwrap();
    }

    pub fn section(&mut self, name: &str) {
        writeln!(self.text, "\n[{name}]").unwrap();
    }

    pub fn render(self) -> String {
        self.text
    }
}

/// CSV with a header row and 17-significant-digit cells.
pub fn csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let cells: Vec<String> = row.iter().map(|v| float(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
