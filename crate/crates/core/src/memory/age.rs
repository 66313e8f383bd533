use super::MemoryError;

pub const DEFAULT_AGE_BUCKETS: usize = 32;
pub const DEFAULT_MAX_AGE: usize = 1000;

/// Geometric age bucketing: bucket 0 is age 0, bucket 1 is age 1, and the
/// remaining lower bounds grow geometrically up to `max_age`; older ages are
/// clipped into the last bucket.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgeBuckets {
    lower: Vec<usize>,
    max_age: usize,
}

impl AgeBuckets {
    pub fn new(count: usize, max_age: usize) -> Self {
        assert!(count >= 2, "at least two age buckets");
        let mut lower = vec![0, 1];
        for i in 2..count {
            let geometric = (max_age.max(1) as f64)
                .powf((i - 1) as f64 / (count - 2) as f64)
                .round() as usize;
            lower.push(geometric.max(lower[i - 1] + 1));
        }
        Self { lower, max_age }
    }

    pub fn count(&self) -> usize {
        self.lower.len()
    }

    pub fn max_age(&self) -> usize {
        self.max_age
    }

    /// Inclusive lower age bound of every bucket, strictly increasing.
    pub fn lower_bounds(&self) -> &[usize] {
        &self.lower
    }

    pub fn bucket(&self, age: usize) -> usize {
        let age = age.min(self.max_age);
        self.lower.partition_point(|&l| l <= age) - 1
    }
}

impl Default for AgeBuckets {
    fn default() -> Self {
        Self::new(DEFAULT_AGE_BUCKETS, DEFAULT_MAX_AGE)
    }
}

/// One vector per age bucket, row-major `[buckets × dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgeEmbeddingTable {
    buckets: AgeBuckets,
    dim: usize,
    vectors: Vec<f64>,
}

impl AgeEmbeddingTable {
    pub fn new(buckets: AgeBuckets, dim: usize, vectors: Vec<f64>) -> Result<Self, MemoryError> {
        if vectors.len() != buckets.count() * dim {
            return Err(MemoryError::InvalidIndex {
                index: vectors.len(),
                len: buckets.count() * dim,
            });
        }
        Ok(Self {
            buckets,
            dim,
            vectors,
        })
    }

    pub fn zeros(buckets: AgeBuckets, dim: usize) -> Self {
        let vectors = vec![0.0; buckets.count() * dim];
        Self {
            buckets,
            dim,
            vectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn buckets(&self) -> &AgeBuckets {
        &self.buckets
    }

    /// Vector for an age (clipped at `max_age`).
    pub fn vector(&self, age: usize) -> &[f64] {
        let b = self.buckets.bucket(age);
        &self.vectors[b * self.dim..(b + 1) * self.dim]
    }
}
