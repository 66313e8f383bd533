//! Finite-difference cases for every layer kind and both policy networks.

use std::cell::RefCell;
use std::sync::Arc;

use memnav::autodiff::{
    Conv1d, Embedding, LayerNorm, Linear, MemoryRows, MultiHeadAttention, ParamStore, Tensor,
};
use memnav::env::{Observation, DEFAULT_RAYS};
use memnav::memory::AgeBuckets;
use memnav::policy::{dropout_mask, HeadKind, MemoryBatch, Percepts, PolicyBatch, PolicyNet};
use memnav::reachability::EMBEDDING_DIM;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, grad_check_sampled, random_tensor, GradCheck};

/// Coordinates probed per policy-network tensor; smaller tensors are checked in full.
const COORDS_PER_TENSOR: usize = 24;

pub type Case = fn(u64) -> GradCheck;

pub const CASES: &[(&str, Case)] = &[
    ("linear", linear),
    ("conv1d", conv1d),
    ("relu", relu),
    ("sigmoid", sigmoid),
    ("softmax", softmax),
    ("layer_norm", layer_norm),
    ("structural", structural),
    ("embedding", embedding),
    ("attention", attention),
    ("factored_attention", factored_attention),
    ("conv_stack", conv_stack),
    ("explore_network", explore_network),
    ("navigate_network", navigate_network),
];

/// Values bounded away from zero so finite differences never straddle a ReLU kink.
fn off_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let len = shape.iter().product();
    let v = (0..len)
        .map(|_| {
            let m: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, v).unwrap()
}

fn elementwise(
    seed: u64,
    op: fn(&mut memnav::autodiff::Graph<f64>, memnav::autodiff::Var) -> memnav::autodiff::Var,
) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let x = store.add("x", off_zero(&mut rng, vec![4, 6]));
    grad_check(&store, seed, |g, s| {
        let xv = g.param(s, x);
        Ok(op(g, xv))
    })
}

fn relu(seed: u64) -> GradCheck {
    elementwise(seed, |g, x| g.relu(x))
}

fn sigmoid(seed: u64) -> GradCheck {
    elementwise(seed, |g, x| g.sigmoid(x))
}

fn softmax(seed: u64) -> GradCheck {
    elementwise(seed, |g, x| g.softmax(x))
}

fn linear(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", 5, 4, true, &mut rng);
    let x = store.add("x", random_tensor(&mut rng, vec![3, 5], -1.0, 1.0));
    grad_check(&store, seed, |g, s| {
        let xv = g.param(s, x);
        lin.apply(g, s, xv)
    })
}

fn conv1d(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let conv = Conv1d::new(&mut store, "c", 3, 4, 3, 2, 1, &mut rng);
    let x = store.add("x", random_tensor(&mut rng, vec![2, 3, 9], -1.0, 1.0));
    grad_check(&store, seed, |g, s| {
        let xv = g.param(s, x);
        conv.apply(g, s, xv)
    })
}

fn layer_norm(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ln = LayerNorm::new(&mut store, "ln", 6);
    *store.value_mut(ln.gamma) = random_tensor(&mut rng, vec![6], 0.5, 1.5);
    *store.value_mut(ln.beta) = random_tensor(&mut rng, vec![6], -0.5, 0.5);
    let x = store.add("x", random_tensor(&mut rng, vec![3, 6], -2.0, 2.0));
    grad_check(&store, seed, |g, s| {
        let xv = g.param(s, x);
        ln.apply(g, s, xv)
    })
}

fn structural(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let a = store.add("a", random_tensor(&mut rng, vec![4, 3], -1.0, 1.0));
    let b = store.add("b", random_tensor(&mut rng, vec![4, 2], -1.0, 1.0));
    let c = store.add("c", random_tensor(&mut rng, vec![4, 3], -1.0, 1.0));
    let factors: Arc<Vec<f64>> = Arc::new((0..12).map(|_| rng.gen_range(-2.0..2.0)).collect());
    grad_check(&store, seed, |g, s| {
        let (av, bv, cv) = (g.param(s, a), g.param(s, b), g.param(s, c));
        let sum = g.add(av, cv)?;
        let scaled = g.scale(sum, factors.clone())?;
        let cat = g.concat(scaled, bv)?;
        let flat = g.reshape(cat, vec![2, 10])?;
        let back = g.reshape(flat, vec![4, 5])?;
        let picked = g.gather(back, vec![3, 0, 3, 1, 1])?;
        g.slice_rows(picked, 1, 3)
    })
}

fn embedding(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let emb = Embedding::new(&mut store, "e", 5, 3, &mut rng);
    grad_check(&store, seed, |g, s| emb.lookup(g, s, vec![4, 2, 4, 0]))
}

fn attention(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "att", 4, 5, 6, 2, &mut rng).unwrap();
    let q = store.add("q", random_tensor(&mut rng, vec![3, 4], -1.0, 1.0));
    let m = store.add("m", random_tensor(&mut rng, vec![5, 5], -1.0, 1.0));
    // the middle query attends to an empty memory
    grad_check(&store, seed, |g, s| {
        let (qv, mv) = (g.param(s, q), g.param(s, m));
        mha.attend(g, s, qv, mv, vec![0, 3, 3, 5])
    })
}

fn factored_attention(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "att", 4, 5, 6, 2, &mut rng).unwrap();
    let ages = Embedding::new(&mut store, "age", 4, 5, &mut rng);
    let q = store.add("q", random_tensor(&mut rng, vec![2, 4], -1.0, 1.0));
    let e = store.add("e", random_tensor(&mut rng, vec![3, 5], -1.0, 1.0));
    let entry = [0, 1, 2, 2, 0];
    let age = [3, 1, 0, 2, 0];
    let offsets = [0, 2, 5];
    grad_check(&store, seed, |g, s| {
        let (qv, ev) = (g.param(s, q), g.param(s, e));
        let table = g.param(s, ages.table);
        let rows = MemoryRows {
            entries: ev,
            ages: Some(table),
            entry: &entry,
            age: &age,
            offsets: &offsets,
        };
        mha.attend_rows(g, s, qv, rows)
    })
}

fn conv_stack(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let c1 = Conv1d::new(&mut store, "c1", 3, 4, 5, 2, 2, &mut rng);
    let c2 = Conv1d::new(&mut store, "c2", 4, 3, 3, 2, 1, &mut rng);
    let head = Linear::new(&mut store, "h", 12, 2, true, &mut rng);
    let x = store.add("x", random_tensor(&mut rng, vec![2, 3, 16], 0.0, 1.0));
    grad_check(&store, seed, |g, s| {
        let xv = g.param(s, x);
        let h = c1.apply(g, s, xv)?;
        let h = g.relu(h);
        let h = c2.apply(g, s, h)?;
        let h = g.relu(h);
        let h = g.reshape(h, vec![2, 12])?;
        head.apply(g, s, h)
    })
}

fn random_obs(rng: &mut ChaCha8Rng) -> Observation {
    Observation::new(
        DEFAULT_RAYS,
        (0..DEFAULT_RAYS * 3)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect(),
    )
    .unwrap()
}

/// Logits and value of a three-query batch with mixed memory sizes and dropout.
fn network(kind: HeadKind, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let net = PolicyNet::<f64>::new(DEFAULT_RAYS, AgeBuckets::new(8, 50), &mut rng).unwrap();
    let obs: Vec<Observation> = (0..3).map(|_| random_obs(&mut rng)).collect();
    let goals: Vec<Observation> = (0..3).map(|_| random_obs(&mut rng)).collect();
    let stored: Vec<f64> = (0..4 * EMBEDDING_DIM)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let mut mem = MemoryBatch::new();
    let base = mem.add_entries(stored.chunks(EMBEDDING_DIM));
    mem.push_query([]);
    mem.push_query([(base, 0), (base + 1, 3)]);
    mem.push_query([(base, 7), (base + 2, 1), (base + 3, 60)]);
    let mask: Vec<f64> = (0..3).flat_map(|_| dropout_mask(0.1, &mut rng)).collect();
    let probe = RefCell::new(net.clone());
    grad_check_sampled(&net.store, seed, COORDS_PER_TENSOR, |g, s| {
        let mut probe = probe.borrow_mut();
        probe.store.clone_from(s);
        let batch = PolicyBatch {
            obs: Percepts::Raw(obs.iter().collect()),
            goals: (kind == HeadKind::Navigate).then(|| Percepts::Raw(goals.iter().collect())),
            memory: &mem,
            dropout: Some(&mask),
        };
        let v = probe.forward_graph(g, kind, &batch)?;
        g.concat(v.logits, v.value)
    })
}

fn explore_network(seed: u64) -> GradCheck {
    network(HeadKind::Explore, seed)
}

fn navigate_network(seed: u64) -> GradCheck {
    network(HeadKind::Navigate, seed)
}
