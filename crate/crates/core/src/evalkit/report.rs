//! Report files: JSON for a single [`EvalReport`] (or any serializable
//! report) and a comparison CSV whose columns follow the usual model
//! comparison table layout.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{EvalError, EvalReport};

pub const TABLE_HEADER: [&str; 7] = [
    "Model",
    "Source",
    "Precision",
    "Recall",
    "F1",
    "Accuracy",
    "Avg. Precision",
];

#[derive(Debug, Clone)]
pub struct TableRow<'a> {
    pub model: &'a str,
    /// "Open" or "Closed".
    pub source: &'a str,
    pub report: &'a EvalReport,
}

impl TableRow<'_> {
    /// Values in column order, formatted to four decimals.
    pub fn cells(&self) -> [String; 7] {
        let r = self.report;
        let f = |v: f64| format!("{v:.4}");
        [
            self.model.to_string(),
            self.source.to_string(),
            f(r.precision),
            f(r.recall),
            f(r.f1),
            f(r.accuracy),
            f(r.average_precision),
        ]
    }
}

pub fn write_table_csv(path: impl AsRef<Path>, rows: &[TableRow<'_>]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(std::io::Error::other)?;
    w.write_record(TABLE_HEADER).map_err(std::io::Error::other)?;
    for row in rows {
        w.write_record(row.cells()).map_err(std::io::Error::other)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report<T: Serialize>(path: impl AsRef<Path>, report: &T) -> Result<(), EvalError> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    fs::write(path.as_ref(), s)?;
    Ok(())
}

pub fn read_report<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, EvalError> {
    Ok(serde_json::from_slice(&fs::read(path.as_ref())?)?)
}
