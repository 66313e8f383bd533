use rand::Rng;

use super::FEATURE_DIM;
use crate::env::Observation;
use crate::memory::MemoryBuffer;
use crate::reachability::EMBEDDING_DIM;

/// Memory for a batch of queries in factored form.
///
/// Distinct stored embeddings live once in `entries`; row `r` pairs entry
/// `entry[r]` with age `age[r]` (in steps), and query `i` attends to rows
/// `offsets[i]..offsets[i + 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryBatch {
    pub entries: Vec<f64>,
    pub entry: Vec<usize>,
    pub age: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl MemoryBatch {
    pub fn new() -> Self {
        Self {
            offsets: vec![0],
            ..Self::default()
        }
    }

    /// `n` queries with empty memories.
    pub fn with_queries(n: usize) -> Self {
        Self {
            offsets: vec![0; n + 1],
            ..Self::default()
        }
    }

    /// Memory of a single query at step `t`: every buffer entry with age `t - insert_step`.
    pub fn from_buffer(buf: &MemoryBuffer, t: usize) -> Self {
        let mut m = Self::new();
        let base = m.add_entries(buf.entries().iter().map(|e| &e.embedding.vector[..]));
        m.push_query(
            buf.entries()
                .iter()
                .enumerate()
                .map(|(j, e)| (base + j, t.saturating_sub(e.insert_step))),
        );
        m
    }

    /// Appends distinct embeddings and returns the index of the first one.
    pub fn add_entries<'a>(&mut self, rows: impl IntoIterator<Item = &'a [f64]>) -> usize {
        let base = self.entry_count();
        for r in rows {
            assert_eq!(
                r.len(),
                EMBEDDING_DIM,
                "memory entries are reachability embeddings"
            );
            self.entries.extend_from_slice(r);
        }
        base
    }

    /// Appends the memory of one more query as `(entry, age)` rows.
    pub fn push_query(&mut self, rows: impl IntoIterator<Item = (usize, usize)>) {
        for (e, a) in rows {
            self.entry.push(e);
            self.age.push(a);
        }
        self.offsets.push(self.entry.len());
    }

    pub fn queries(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn rows(&self) -> usize {
        self.entry.len()
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len() / EMBEDDING_DIM
    }
}

/// Observations fed to the CNN, or CNN features computed beforehand (no CNN gradient).
#[derive(Clone, Debug)]
pub enum Percepts<'a> {
    Raw(Vec<&'a Observation>),
    /// Row-major `[N × FEATURE_DIM]`.
    Features(&'a [f64]),
}

impl Percepts<'_> {
    pub fn len(&self) -> usize {
        match self {
            Percepts::Raw(o) => o.len(),
            Percepts::Features(f) => f.len() / FEATURE_DIM,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Inputs of one batched forward pass.
#[derive(Clone, Debug)]
pub struct PolicyBatch<'a> {
    pub obs: Percepts<'a>,
    /// Goal observations, navigation only.
    pub goals: Option<Percepts<'a>>,
    pub memory: &'a MemoryBatch,
    /// Per-query multiplicative masks on `h`, `[N × FEATURE_DIM]`.
    pub dropout: Option<&'a [f64]>,
}

impl PolicyBatch<'_> {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Inverted dropout mask for one query: each unit is `0` with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask<R: Rng>(p: f64, rng: &mut R) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; FEATURE_DIM];
    }
    let keep = 1.0 / (1.0 - p);
    (0..FEATURE_DIM)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}
