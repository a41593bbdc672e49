//! Loading labeled pair datasets from CSV.
//!
//! The header must name `question1`, `question2` and `is_duplicate`, matched
//! case-insensitively, in any column order. Extra columns (such as the `id`,
//! `qid1`, `qid2` columns of Quora-style dumps) are ignored.

use std::fmt;
use std::path::Path;

use crate::pair::LabeledPair;

use super::EvalError;

const REQUIRED: [&str; 3] = ["question1", "question2", "is_duplicate"];

/// A rejected data row; `line` is the 1-based line in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

pub fn load_pairs_csv(path: impl AsRef<Path>) -> Result<Vec<LabeledPair>, EvalError> {
    let file = std::fs::File::open(path.as_ref())?;
    read_pairs_csv(file)
}

pub fn read_pairs_csv(reader: impl std::io::Read) -> Result<Vec<LabeledPair>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| EvalError::Schema(format!("unreadable header: {e}")))?
        .clone();
    let mut cols = [0usize; 3];
    for (slot, name) in cols.iter_mut().zip(REQUIRED) {
        *slot = headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| EvalError::Schema(format!("missing column {name}")))?;
    }

    let mut pairs = Vec::new();
    let mut errors = Vec::new();
    for result in rdr.records() {
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let label = field(cols[2]).trim();
        let parsed = match label {
            "0" => LabeledPair::new(field(cols[0]), field(cols[1]), false),
            "1" => LabeledPair::new(field(cols[0]), field(cols[1]), true),
            other => {
                errors.push(RowError {
                    line,
                    message: format!("is_duplicate must be 0 or 1, got {other:?}"),
                });
                continue;
            }
        };
        match parsed {
            Ok(p) => pairs.push(p),
            Err(e) => errors.push(RowError {
                line,
                message: e.to_string(),
            }),
        }
    }
    if !errors.is_empty() {
        return Err(EvalError::Rows(errors));
    }
    Ok(pairs)
}

/// Writes pairs with the same three-column header the loader expects.
pub fn write_pairs_csv<'a>(
    path: impl AsRef<Path>,
    pairs: impl IntoIterator<Item = &'a LabeledPair>,
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
    w.write_record(REQUIRED).map_err(csv_io)?;
    for p in pairs {
        w.write_record([p.question1(), p.question2(), &p.label().to_string()])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> EvalError {
    EvalError::Io(std::io::Error::other(e))
}
