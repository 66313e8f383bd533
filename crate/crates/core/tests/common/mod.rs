#![allow(dead_code)]

pub mod grad_cases;

use memnav::autodiff::{AutodiffError, Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradients with norm below this are compared in absolute terms; shift
/// invariances (e.g. key biases under softmax) make some exactly zero.
pub const GRAD_FLOOR: f64 = 1e-5;
/// A coordinate whose one-sided slopes differ by more than this (relative to
/// `1 + |slope|`) sits on a ReLU kink, where no derivative exists to compare.
pub const KINK_TOLERANCE: f64 = 1e-4;

/// Outcome of a finite-difference check.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradCheck {
    /// Worst per-tensor relative error.
    pub worst: f64,
    pub probed: usize,
    /// Coordinates left out because they sit on a kink.
    pub kinks: usize,
}

/// Central finite-difference check of every parameter gradient for the
/// scalar loss `Σ c ⊙ out`, with `c` a fixed random weighting.
///
/// The per-tensor relative error is `‖a − n‖ / max(‖a‖, ‖n‖, floor)`.
pub fn grad_check<F>(store: &ParamStore<f64>, seed: u64, build: F) -> GradCheck
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, AutodiffError>,
{
    grad_check_sampled(store, seed, usize::MAX, build)
}

/// As [`grad_check`], probing at most `max_coords` seeded coordinates per tensor.
pub fn grad_check_sampled<F>(
    store: &ParamStore<f64>,
    seed: u64,
    max_coords: usize,
    build: F,
) -> GradCheck
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, AutodiffError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let mut g = Graph::new();
    let out = build(&mut g, store).expect("forward");
    let shape = g.value(out).shape().to_vec();
    let weights: Vec<f64> = (0..g.value(out).len())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let upstream = Tensor::new(shape, weights.clone()).unwrap();
    let grads = g.backward(out, &upstream).expect("backward");
    drop(g);

    let loss = |s: &ParamStore<f64>| -> f64 {
        let mut g = Graph::new();
        let out = build(&mut g, s).expect("forward");
        g.value(out)
            .values()
            .iter()
            .zip(&weights)
            .map(|(a, b)| a * b)
            .sum()
    };

    let base = loss(store);
    let mut report = GradCheck::default();
    let mut probe = store.clone();
    for id in store.ids() {
        let full = grads
            .get(id)
            .map(|t| t.values().to_vec())
            .unwrap_or_else(|| vec![0.0; store.value(id).len()]);
        let coords: Vec<usize> = if full.len() <= max_coords {
            (0..full.len()).collect()
        } else {
            rand::seq::index::sample(&mut rng, full.len(), max_coords).into_vec()
        };
        let mut analytic = Vec::with_capacity(coords.len());
        let mut numeric = Vec::with_capacity(coords.len());
        for &i in &coords {
            let orig = probe.value(id).values()[i];
            probe.value_mut(id).values_mut()[i] = orig + FD_STEP;
            let up = loss(&probe);
            probe.value_mut(id).values_mut()[i] = orig - FD_STEP;
            let down = loss(&probe);
            probe.value_mut(id).values_mut()[i] = orig;
            let central = (up - down) / (2.0 * FD_STEP);
            let (fwd, bwd) = ((up - base) / FD_STEP, (base - down) / FD_STEP);
            report.probed += 1;
            if (fwd - bwd).abs() > KINK_TOLERANCE * (1.0 + central.abs()) {
                report.kinks += 1;
                continue;
            }
            analytic.push(full[i]);
            numeric.push(central);
        }
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let scale = norm(&analytic).max(norm(&numeric));
        let rel = diff / scale.max(GRAD_FLOOR);
        if rel > FD_TOLERANCE {
            eprintln!("{}: relative error {rel:e}", store.param(id).name);
        }
        report.worst = report.worst.max(rel);
    }
    report
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}
