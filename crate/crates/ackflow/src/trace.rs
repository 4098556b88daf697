//! Trace recording and CSV emission.
//!
//! A [`TraceSet`] is a fixed-schema table: one time column plus named value
//! columns, filled row by row on the solver grid. Columns are named
//! `<element>.<field>` (for example `b1.q` or `u2.w`). CSV output uses
//! scientific notation with nine significant digits, so emitted traces are
//! bit-stable across runs.

use std::io::{self, Write};

/// Column-major trace table with a shared time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    times: Vec<f64>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl TraceSet {
    pub fn new<I>(names: I) -> Self
    where
        I: IntoIterator,
        I::Item: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let columns = vec![Vec::new(); names.len()];
        TraceSet {
            times: Vec::new(),
            names,
            columns,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Appends one row. The row length must match the schema.
    pub fn push_row(&mut self, t: f64, row: &[f64]) {
        assert_eq!(row.len(), self.columns.len(), "row arity mismatch");
        if let Some(&last) = self.times.last() {
            assert!(t > last, "trace times must be strictly increasing");
        }
        self.times.push(t);
        for (col, &v) in self.columns.iter_mut().zip(row) {
            col.push(v);
        }
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    /// Appends a derived column; the values must cover every existing row.
    pub fn add_column(&mut self, name: impl Into<String>, values: Vec<f64>) {
        assert_eq!(values.len(), self.times.len(), "column length mismatch");
        let name = name.into();
        assert!(!self.has_column(&name), "duplicate column {name:?}");
        self.names.push(name);
        self.columns.push(values);
    }

    /// First row index at or after `t` (within 1e-12 slack).
    pub fn index_from(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s < t - 1e-12)
    }

    /// Value of a column just before `t`: the last row strictly earlier than
    /// `t`. Before the first row the first value is returned (constant
    /// pre-history).
    pub fn value_before(&self, name: &str, t: f64) -> Option<f64> {
        let col = self.column(name)?;
        if col.is_empty() {
            return None;
        }
        let idx = self.times.partition_point(|&s| s < t - 1e-12);
        Some(col[idx.saturating_sub(1)])
    }

    /// Writes the whole table as CSV with a `time_s` header column.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let all: Vec<&str> = self.names.iter().map(String::as_str).collect();
        self.write_csv_columns(w, &all)
    }

    /// Writes a column subset (per-element files) in the given order.
    pub fn write_csv_columns<W: Write>(&self, w: &mut W, names: &[&str]) -> io::Result<()> {
        write!(w, "time_s")?;
        for name in names {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        let cols: Vec<&[f64]> = names
            .iter()
            .map(|name| {
                self.column(name)
                    .unwrap_or_else(|| panic!("unknown trace column {name:?}"))
            })
            .collect();
        for (i, &t) in self.times.iter().enumerate() {
            write!(w, "{t:.8e}")?;
            for col in &cols {
                write!(w, ",{:.8e}", col[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Largest absolute difference between two equal-grid columns, ignoring rows
/// before `from`.
pub fn max_abs_deviation(a: &[f64], b: &[f64], from: usize) -> f64 {
    a.iter()
        .zip(b)
        .skip(from)
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f64::max)
}
