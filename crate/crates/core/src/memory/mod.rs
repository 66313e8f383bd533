//! Scene memory: the thresholded embedding buffer, temporal age embeddings
//! and the anchor-transition graph over buffer entries.

mod age;
mod dump;
mod graph;

pub use age::{AgeBuckets, AgeEmbeddingTable, DEFAULT_AGE_BUCKETS, DEFAULT_MAX_AGE};
pub use dump::{read_dump, write_dump, DumpRecord};
pub use graph::ExplorationGraph;

use crate::reachability::{Comparator, Embedding};

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("the memory buffer is empty")]
    EmptyBuffer,
    #[error("index {index} out of range for {len} entries")]
    InvalidIndex { index: usize, len: usize },
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("malformed dump line {line}: {message}")]
    MalformedDump { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry {
    pub embedding: Embedding,
    pub insert_step: usize,
}

/// Ordered set of stored embeddings; insertion requires novelty below `tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBuffer {
    entries: Vec<MemoryEntry>,
    tau: f64,
}

impl MemoryBuffer {
    pub fn new(tau: f64) -> Result<Self, MemoryError> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(MemoryError::InvalidThreshold(tau));
        }
        Ok(Self {
            entries: Vec::new(),
            tau,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Result<&MemoryEntry, MemoryError> {
        self.entries.get(index).ok_or(MemoryError::InvalidIndex {
            index,
            len: self.entries.len(),
        })
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Comparator scores of `e` against every entry, in entry order.
    pub fn scores<C: Comparator + ?Sized>(&self, cmp: &mut C, e: &Embedding) -> Vec<f64> {
        if self.entries.is_empty() {
            return Vec::new();
        }
        let refs: Vec<&Embedding> = self.entries.iter().map(|m| &m.embedding).collect();
        cmp.scores(e, &refs)
    }
}

/// Highest comparator score of `e_t` against the buffer; `-inf` when empty.
pub fn novelty_score<C: Comparator + ?Sized>(
    cmp: &mut C,
    e_t: &Embedding,
    buf: &MemoryBuffer,
) -> f64 {
    max_score(&buf.scores(cmp, e_t))
}

fn max_score(scores: &[f64]) -> f64 {
    scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Appends `e_t` at step `t` iff `score < tau`; returns whether it was stored.
pub fn smb_update(buf: &mut MemoryBuffer, e_t: Embedding, t: usize, score: f64) -> bool {
    let inserted = score < buf.tau;
    if inserted {
        debug_assert!(
            buf.entries.last().is_none_or(|m| m.insert_step < t),
            "insert steps must increase"
        );
        buf.entries.push(MemoryEntry {
            embedding: e_t,
            insert_step: t,
        });
    }
    inserted
}

/// Index of the highest score, ties to the lower index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Moves the anchor to the entry closest to `e_t` and records the transition.
///
/// A freshly inserted observation is its own anchor; otherwise the anchor is
/// the highest-scoring entry.
pub fn update_anchor<C: Comparator + ?Sized>(
    graph: &mut ExplorationGraph,
    buf: &MemoryBuffer,
    cmp: &mut C,
    e_t: &Embedding,
    inserted: bool,
) -> Result<usize, MemoryError> {
    let anchor = if inserted {
        buf.len().checked_sub(1).ok_or(MemoryError::EmptyBuffer)?
    } else {
        argmax(&buf.scores(cmp, e_t)).ok_or(MemoryError::EmptyBuffer)?
    };
    graph.move_anchor(anchor, buf.len())?;
    Ok(anchor)
}

/// What one observation did to the memory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemoryStep {
    pub score: f64,
    pub inserted: bool,
    pub anchor: usize,
}

/// Novelty score, buffer update and anchor update for one observation,
/// scoring the buffer once.
pub fn observe<C: Comparator + ?Sized>(
    cmp: &mut C,
    buf: &mut MemoryBuffer,
    graph: &mut ExplorationGraph,
    e_t: Embedding,
    t: usize,
) -> Result<MemoryStep, MemoryError> {
    let scores = buf.scores(cmp, &e_t);
    let score = max_score(&scores);
    let inserted = smb_update(buf, e_t, t, score);
    let anchor = if inserted {
        buf.len() - 1
    } else {
        argmax(&scores).ok_or(MemoryError::EmptyBuffer)?
    };
    graph.move_anchor(anchor, buf.len())?;
    Ok(MemoryStep {
        score,
        inserted,
        anchor,
    })
}

/// Entry vectors plus their age embeddings at time `t`, row-major `[J × dim]`.
pub fn aged_entries(buf: &MemoryBuffer, table: &AgeEmbeddingTable, t: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(buf.len() * table.dim());
    for m in &buf.entries {
        let age = table.vector(t.saturating_sub(m.insert_step));
        out.extend(m.embedding.vector.iter().zip(age).map(|(a, b)| a + b));
    }
    out
}
