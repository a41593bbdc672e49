//! Labeled question pairs, the row format shared by every dataset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PairError {
    #[error("question1 is empty")]
    EmptyQuestion1,
    #[error("question2 is empty")]
    EmptyQuestion2,
    #[error("is_duplicate must be 0 or 1, got {0}")]
    BadLabel(i64),
}

/// `(question1, question2, is_duplicate)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawPair", into = "RawPair")]
pub struct LabeledPair {
    question1: String,
    question2: String,
    is_duplicate: bool,
}

#[derive(Serialize, Deserialize)]
struct RawPair {
    question1: String,
    question2: String,
    is_duplicate: i64,
}

impl TryFrom<RawPair> for LabeledPair {
    type Error = PairError;

    fn try_from(raw: RawPair) -> Result<Self, PairError> {
        LabeledPair::from_label(raw.question1, raw.question2, raw.is_duplicate)
    }
}

impl From<LabeledPair> for RawPair {
    fn from(p: LabeledPair) -> Self {
        RawPair {
            is_duplicate: p.label(),
            question1: p.question1,
            question2: p.question2,
        }
    }
}

impl LabeledPair {
    pub fn new(
        question1: impl Into<String>,
        question2: impl Into<String>,
        is_duplicate: bool,
    ) -> Result<Self, PairError> {
        let question1 = question1.into();
        let question2 = question2.into();
        if question1.trim().is_empty() {
            return Err(PairError::EmptyQuestion1);
        }
        if question2.trim().is_empty() {
            return Err(PairError::EmptyQuestion2);
        }
        Ok(Self {
            question1,
            question2,
            is_duplicate,
        })
    }

    /// Accepts the integer label used on disk; anything but 0 or 1 is rejected.
    pub fn from_label(
        question1: impl Into<String>,
        question2: impl Into<String>,
        label: i64,
    ) -> Result<Self, PairError> {
        let dup = match label {
            0 => false,
            1 => true,
            other => return Err(PairError::BadLabel(other)),
        };
        Self::new(question1, question2, dup)
    }

    pub fn question1(&self) -> &str {
        &self.question1
    }

    pub fn question2(&self) -> &str {
        &self.question2
    }

    pub fn is_duplicate(&self) -> bool {
        self.is_duplicate
    }

    /// The label as written in datasets: 1 for duplicates, 0 otherwise.
    pub fn label(&self) -> i64 {
        i64::from(self.is_duplicate)
    }
}
