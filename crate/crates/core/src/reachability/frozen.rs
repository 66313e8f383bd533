use std::collections::HashMap;
use std::sync::Arc;

use super::model::{ReachabilityModel, EMBEDDING_DIM, HIDDEN_DIM};
use crate::autodiff::{sigmoid, AutodiffError};
use crate::env::Observation;
use crate::scalar::{matmul, MatRef};

/// An embedding `g(x)` tagged with the interned id of its observation.
///
/// Equal keys from one [`FrozenReachability`] always carry equal vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub key: u32,
    pub vector: Arc<[f64]>,
}

/// Reachability comparator over embeddings, argument order `(current, memory)`.
pub trait Comparator {
    fn scores(&mut self, current: &Embedding, memory: &[&Embedding]) -> Vec<f64>;

    fn score(&mut self, current: &Embedding, memory: &Embedding) -> f64 {
        self.scores(current, &[memory])[0]
    }
}

/// Memoizing evaluator of a frozen reachability model.
///
/// Observations are interned by exact bit pattern; embeddings, the two
/// halves of `f`'s first layer, and every scored `(current, memory)` pair are
/// cached. Each rollout worker owns its own clone.
#[derive(Clone, Debug)]
pub struct FrozenReachability {
    model: Arc<ReachabilityModel<f64>>,
    intern: HashMap<Vec<u64>, u32>,
    embeddings: Vec<Arc<[f64]>>,
    /// `W_cur · e + b` per key.
    as_current: Vec<Vec<f64>>,
    /// `W_mem · e` per key.
    as_memory: Vec<Vec<f64>>,
    scores: HashMap<(u32, u32), f64>,
}

impl FrozenReachability {
    pub fn new(model: ReachabilityModel<f64>) -> Self {
        Self {
            model: Arc::new(model),
            intern: HashMap::new(),
            embeddings: Vec::new(),
            as_current: Vec::new(),
            as_memory: Vec::new(),
            scores: HashMap::new(),
        }
    }

    pub fn model(&self) -> &ReachabilityModel<f64> {
        &self.model
    }

    /// Number of distinct observations seen.
    pub fn distinct_observations(&self) -> usize {
        self.embeddings.len()
    }

    pub fn embed(&mut self, obs: &Observation) -> Result<Embedding, AutodiffError> {
        let bits = obs.bit_key();
        if let Some(&key) = self.intern.get(&bits) {
            return Ok(Embedding {
                key,
                vector: self.embeddings[key as usize].clone(),
            });
        }
        let e = self.model.embed(obs)?;
        let w = self.model.store.value(self.model.f[0].weight).values();
        let b = self
            .model
            .store
            .value(self.model.f[0].bias.expect("f has biases"))
            .values();
        let mut cur = b.to_vec();
        let mut mem = vec![0.0; HIDDEN_DIM];
        for i in 0..HIDDEN_DIM {
            let row = &w[i * 2 * EMBEDDING_DIM..(i + 1) * 2 * EMBEDDING_DIM];
            cur[i] += row[..EMBEDDING_DIM]
                .iter()
                .zip(&e)
                .map(|(a, b)| a * b)
                .sum::<f64>();
            mem[i] = row[EMBEDDING_DIM..]
                .iter()
                .zip(&e)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        let key =
            u32::try_from(self.embeddings.len()).expect("fewer than 2^32 distinct observations");
        let vector: Arc<[f64]> = e.into();
        self.intern.insert(bits, key);
        self.embeddings.push(vector.clone());
        self.as_current.push(cur);
        self.as_memory.push(mem);
        Ok(Embedding { key, vector })
    }

    /// `R(a, b)` through the cache.
    pub fn reachability(&mut self, a: &Observation, b: &Observation) -> Result<f64, AutodiffError> {
        let (ea, eb) = (self.embed(a)?, self.embed(b)?);
        Ok(self.score(&ea, &eb))
    }

    fn check(&self, e: &Embedding) {
        assert!(
            self.embeddings
                .get(e.key as usize)
                .is_some_and(|v| Arc::ptr_eq(v, &e.vector) || **v == *e.vector),
            "embedding key {} was not produced by this evaluator",
            e.key
        );
    }

    fn compute(&self, pairs: &[(u32, u32)]) -> Vec<f64> {
        let n = pairs.len();
        let mut h1 = vec![0.0; n * HIDDEN_DIM];
        for (row, &(c, m)) in h1.chunks_mut(HIDDEN_DIM).zip(pairs) {
            for ((h, a), b) in row
                .iter_mut()
                .zip(&self.as_current[c as usize])
                .zip(&self.as_memory[m as usize])
            {
                *h = (a + b).max(0.0);
            }
        }
        let store = &self.model.store;
        let w1 = store.value(self.model.f[1].weight).values();
        let b1 = store
            .value(self.model.f[1].bias.expect("f has biases"))
            .values();
        let w2 = store.value(self.model.f[2].weight).values();
        let b2 = store
            .value(self.model.f[2].bias.expect("f has biases"))
            .values()[0];
        let mut h2 = vec![0.0; n * HIDDEN_DIM];
        matmul(
            MatRef::new(&h1, n, HIDDEN_DIM),
            MatRef::new(w1, HIDDEN_DIM, HIDDEN_DIM).t(),
            &mut h2,
            false,
        );
        h2.chunks(HIDDEN_DIM)
            .map(|row| {
                let z: f64 = row
                    .iter()
                    .zip(b1)
                    .zip(w2)
                    .map(|((h, b), w)| (h + b).max(0.0) * w)
                    .sum();
                sigmoid(z + b2)
            })
            .collect()
    }
}

impl Comparator for FrozenReachability {
    fn scores(&mut self, current: &Embedding, memory: &[&Embedding]) -> Vec<f64> {
        self.check(current);
        let mut missing: Vec<(u32, u32)> = Vec::new();
        for m in memory {
            self.check(m);
            let k = (current.key, m.key);
            if !self.scores.contains_key(&k) && !missing.contains(&k) {
                missing.push(k);
            }
        }
        if !missing.is_empty() {
            let fresh = self.compute(&missing);
            self.scores.extend(missing.into_iter().zip(fresh));
        }
        memory
            .iter()
            .map(|m| self.scores[&(current.key, m.key)])
            .collect()
    }
}

/// Uncached scoring straight through the model; keys are ignored.
impl Comparator for ReachabilityModel<f64> {
    fn scores(&mut self, current: &Embedding, memory: &[&Embedding]) -> Vec<f64> {
        let cur: Vec<&[f64]> = vec![&current.vector; memory.len()];
        let mem: Vec<&[f64]> = memory.iter().map(|m| &*m.vector).collect();
        self.compare_batch(&cur, &mem)
            .expect("embeddings have the model's dimension")
    }
}
