//! Exact top-k cosine search over normalized embeddings.
//!
//! Every entry is normalized on insert, so a query's score against an entry is
//! a single dot product. Results are ordered by score descending, ties broken
//! by insertion sequence (older first).

use std::cmp::Ordering;
use std::collections::HashMap;

use thiserror::Error;

use crate::embedding::{dot, Embedding, SimilarityScore, VectorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("id {0} already present")]
    DuplicateId(u64),
    #[error("dimension mismatch: index holds {expected}-d vectors, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero vector")]
    ZeroVector,
    #[error("k must be at least 1")]
    ZeroK,
}

impl From<VectorError> for IndexError {
    fn from(e: VectorError) -> Self {
        match e {
            VectorError::DimensionMismatch { expected, actual } => {
                IndexError::DimensionMismatch { expected, actual }
            }
            _ => IndexError::ZeroVector,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub id: u64,
    pub vector: Embedding,
    pub insert_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    pub id: u64,
    pub score: SimilarityScore,
}

/// Brute-force index. The dimension is fixed by the first insert and reset
/// when the index becomes empty.
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    dim: Option<usize>,
    entries: Vec<IndexEntry>,
    positions: HashMap<u64, usize>,
    next_seq: u64,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn contains(&self, id: u64) -> bool {
        self.positions.contains_key(&id)
    }

    pub fn get(&self, id: u64) -> Option<&IndexEntry> {
        self.positions.get(&id).map(|&i| &self.entries[i])
    }

    fn check_dim(&self, actual: usize) -> Result<(), IndexError> {
        match self.dim {
            Some(expected) if expected != actual => {
                Err(IndexError::DimensionMismatch { expected, actual })
            }
            _ => Ok(()),
        }
    }

    pub fn insert(&mut self, id: u64, embedding: Embedding) -> Result<(), IndexError> {
        if self.contains(id) {
            return Err(IndexError::DuplicateId(id));
        }
        self.check_dim(embedding.dim())?;
        let vector = embedding.into_normalized()?;
        self.dim = Some(vector.dim());
        self.positions.insert(id, self.entries.len());
        self.entries.push(IndexEntry {
            id,
            vector,
            insert_seq: self.next_seq,
        });
        self.next_seq += 1;
        Ok(())
    }

    /// Returns whether `id` was present.
    pub fn remove(&mut self, id: u64) -> bool {
        let Some(pos) = self.positions.remove(&id) else {
            return false;
        };
        self.entries.swap_remove(pos);
        if let Some(moved) = self.entries.get(pos) {
            self.positions.insert(moved.id, pos);
        }
        if self.entries.is_empty() {
            self.dim = None;
        }
        true
    }

    /// Top-`k` entries by cosine similarity to `query`.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        self.check_dim(query.dim())?;
        let query = query.normalize()?;
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }

        let mut scored: Vec<(f64, u64, u64)> = self
            .entries
            .iter()
            .map(|e| {
                let s = SimilarityScore::new(dot(query.values(), e.vector.values()));
                (s.value(), e.insert_seq, e.id)
            })
            .collect();
        let order = |a: &(f64, u64, u64), b: &(f64, u64, u64)| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .map(|(score, _, id)| SearchHit {
                id,
                score: SimilarityScore::new(score),
            })
            .collect())
    }

    /// Entries in insertion order.
    pub fn entries_by_seq(&self) -> Vec<&IndexEntry> {
        let mut v: Vec<&IndexEntry> = self.entries.iter().collect();
        v.sort_by_key(|e| e.insert_seq);
        v
    }
}
