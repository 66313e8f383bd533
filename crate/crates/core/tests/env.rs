use memnav::env::{
    fixtures, load_map, oracle_distance, render, step, Action, Heading, MazeMap, Pose, DEFAULT_RAYS,
};
use proptest::prelude::*;

fn rooms(seed: u64) -> MazeMap {
    load_map(fixtures::ROOMS_15, seed).unwrap()
}

fn poses(map: &MazeMap) -> Vec<Pose> {
    map.free_cells()
        .flat_map(|(x, y)| (0..4).map(move |h| Pose::new(x, y, Heading::from_index(h))))
        .collect()
}

fn rollout(map: &MazeMap, actions: &[usize]) -> Vec<(Pose, Vec<u64>)> {
    let mut pose = map.start_pose();
    let mut out = vec![(pose, render(map, &pose, DEFAULT_RAYS).bit_key())];
    for &a in actions {
        pose = step(map, pose, Action::ALL[a]);
        out.push((pose, render(map, &pose, DEFAULT_RAYS).bit_key()));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trajectories_are_deterministic(seed in 0u64..1000, actions in prop::collection::vec(0usize..3, 0..60)) {
        let a = rollout(&rooms(seed), &actions);
        let b = rollout(&rooms(seed), &actions);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn oracle_distance_is_a_metric(i in any::<prop::sample::Index>(), j in any::<prop::sample::Index>(), k in any::<prop::sample::Index>()) {
        let map = load_map(fixtures::WINGS_19, 0).unwrap();
        let p = poses(&map);
        let (a, b, c) = (i.get(&p), j.get(&p), k.get(&p));
        prop_assert_eq!(oracle_distance(&map, a, b), oracle_distance(&map, b, a));
        prop_assert!(oracle_distance(&map, a, c) <= oracle_distance(&map, a, b) + oracle_distance(&map, b, c));
        prop_assert_eq!(oracle_distance(&map, a, b) == 0, a.cell() == b.cell());
    }
}

/// Far-apart poses look more different than the closest pair of views from one cell.
#[test]
fn rendering_discriminates_positions() {
    for seed in 0..3 {
        let map = rooms(seed);
        let p = poses(&map);
        let obs: Vec<_> = p.iter().map(|q| render(&map, q, DEFAULT_RAYS)).collect();
        let mut same_cell_min = f64::INFINITY;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                if p[i].cell() == p[j].cell() {
                    same_cell_min = same_cell_min.min(obs[i].l2_distance(&obs[j]));
                }
            }
        }
        let (mut far, mut separated) = (0usize, 0usize);
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                if oracle_distance(&map, &p[i], &p[j]) > 3 {
                    far += 1;
                    separated += usize::from(obs[i].l2_distance(&obs[j]) > same_cell_min);
                }
            }
        }
        let frac = separated as f64 / far as f64;
        assert!(frac >= 0.95, "seed {seed}: {separated}/{far} = {frac:.4}");
    }
}
