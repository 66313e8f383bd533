use common::random_tensor;
use memnav::autodiff::{Graph, MemoryRows, MultiHeadAttention, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;

#[test]
fn factored_attention_matches_explicit_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "att", 4, 5, 6, 2, &mut rng).unwrap();
    let q = random_tensor(&mut rng, vec![2, 4], -1.0, 1.0);
    let e = random_tensor(&mut rng, vec![3, 5], -1.0, 1.0);
    let a = random_tensor(&mut rng, vec![4, 5], -1.0, 1.0);
    let (entry, age, offsets) = ([0usize, 1, 2, 2, 0], [3usize, 1, 0, 2, 0], [0usize, 2, 5]);
    let explicit: Vec<f64> = entry
        .iter()
        .zip(&age)
        .flat_map(|(&i, &j)| (0..5).map(move |c| (i, j, c)))
        .map(|(i, j, c)| e.row(i)[c] + a.row(j)[c])
        .collect();
    let mut g = Graph::new();
    let (qv, ev, av) = (g.input(q.clone()), g.input(e), g.input(a));
    let rows = MemoryRows {
        entries: ev,
        ages: Some(av),
        entry: &entry,
        age: &age,
        offsets: &offsets,
    };
    let factored = mha.attend_rows(&mut g, &store, qv, rows).unwrap();
    let mv = g.input(Tensor::new(vec![5, 5], explicit).unwrap());
    let qv2 = g.input(q);
    let direct = mha
        .attend(&mut g, &store, qv2, mv, offsets.to_vec())
        .unwrap();
    for (x, y) in g
        .value(factored)
        .values()
        .iter()
        .zip(g.value(direct).values())
    {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}
