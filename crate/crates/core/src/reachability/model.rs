use std::path::Path;

use rand::Rng;

use crate::autodiff::{self, AutodiffError, ConvEncoder, Graph, Linear, ParamStore, Tensor, Var};
use crate::env::{Observation, CHANNELS};
use crate::scalar::Scalar;

pub const EMBEDDING_DIM: usize = 128;
pub const HIDDEN_DIM: usize = 512;

/// Siamese reachability network: embedding net `g` and comparator `f`.
///
/// `f` maps `[g(current), g(memory)]` through two ReLU layers to one logit;
/// scores are the logistic of that logit.
#[derive(Clone, Debug)]
pub struct ReachabilityModel<S: Scalar = f64> {
    pub store: ParamStore<S>,
    pub g: ConvEncoder,
    pub f: [Linear; 3],
}

fn mismatch(msg: String) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg)
}

/// Fixed input standardization: strips are rescaled to roughly zero mean and
/// unit variance before the encoders (typical strip values are ~0.16 ± 0.12).
pub const INPUT_MEAN: f64 = 0.16;
pub const INPUT_STD: f64 = 0.12;

/// Standardized channel-major batch `[N, 3, rays]`.
pub fn observation_batch<S: Scalar>(
    obs: &[&Observation],
    rays: usize,
) -> Result<Tensor<S>, AutodiffError> {
    let mut values = Vec::with_capacity(obs.len() * rays * CHANNELS);
    for o in obs {
        if o.rays() != rays {
            return Err(mismatch(format!(
                "observation has {} rays, model expects {rays}",
                o.rays()
            )));
        }
        values.extend(
            o.channel_major()
                .into_iter()
                .map(|v| S::lit((v - INPUT_MEAN) / INPUT_STD)),
        );
    }
    Tensor::new(vec![obs.len(), CHANNELS, rays], values)
}

impl<S: Scalar> ReachabilityModel<S> {
    pub fn new<R: Rng>(rays: usize, rng: &mut R) -> Result<Self, AutodiffError> {
        let mut store = ParamStore::new();
        let g = ConvEncoder::new(&mut store, "g", CHANNELS, rays, EMBEDDING_DIM, rng)?;
        let f = [
            Linear::new(
                &mut store,
                "f.fc0",
                2 * EMBEDDING_DIM,
                HIDDEN_DIM,
                true,
                rng,
            ),
            Linear::new(&mut store, "f.fc1", HIDDEN_DIM, HIDDEN_DIM, true, rng),
            Linear::new(&mut store, "f.out", HIDDEN_DIM, 1, true, rng),
        ];
        Ok(Self { store, g, f })
    }

    pub fn rays(&self) -> usize {
        self.g.rays
    }

    /// The same network in another precision.
    pub fn cast<T: Scalar>(&self) -> ReachabilityModel<T> {
        ReachabilityModel {
            store: self.store.cast(),
            g: self.g.clone(),
            f: self.f.clone(),
        }
    }

    /// Embeddings `[N, 128]` of a batch of observations on graph `g`.
    pub fn embed_graph(
        &self,
        graph: &mut Graph<S>,
        obs: &[&Observation],
    ) -> Result<Var, AutodiffError> {
        let x = graph.input(observation_batch(obs, self.rays())?);
        self.g.apply(graph, &self.store, x)
    }

    /// Comparator logits `[N, 1]` for aligned embedding rows.
    pub fn logits_graph(
        &self,
        graph: &mut Graph<S>,
        current: Var,
        memory: Var,
    ) -> Result<Var, AutodiffError> {
        let x = graph.concat(current, memory)?;
        let h = self.f[0].apply(graph, &self.store, x)?;
        let h = graph.relu(h);
        let h = self.f[1].apply(graph, &self.store, h)?;
        let h = graph.relu(h);
        self.f[2].apply(graph, &self.store, h)
    }

    pub fn embed_batch(&self, obs: &[&Observation]) -> Result<Vec<Vec<S>>, AutodiffError> {
        if obs.is_empty() {
            return Ok(Vec::new());
        }
        let mut graph = Graph::new();
        let e = self.embed_graph(&mut graph, obs)?;
        Ok(graph
            .value(e)
            .values()
            .chunks(EMBEDDING_DIM)
            .map(<[S]>::to_vec)
            .collect())
    }

    pub fn embed(&self, obs: &Observation) -> Result<Vec<S>, AutodiffError> {
        Ok(self.embed_batch(&[obs])?.pop().expect("one row"))
    }

    /// Scores in `[0, 1]` for aligned `(current, memory)` embedding pairs.
    pub fn compare_batch(
        &self,
        current: &[&[S]],
        memory: &[&[S]],
    ) -> Result<Vec<S>, AutodiffError> {
        if current.len() != memory.len() {
            return Err(mismatch(format!(
                "{} current vs {} memory embeddings",
                current.len(),
                memory.len()
            )));
        }
        if current.is_empty() {
            return Ok(Vec::new());
        }
        let stack = |rows: &[&[S]]| -> Result<Tensor<S>, AutodiffError> {
            if let Some(r) = rows.iter().find(|r| r.len() != EMBEDDING_DIM) {
                return Err(mismatch(format!(
                    "embedding of dim {}, expected {EMBEDDING_DIM}",
                    r.len()
                )));
            }
            Tensor::new(vec![rows.len(), EMBEDDING_DIM], rows.concat())
        };
        let mut graph = Graph::new();
        let a = graph.input(stack(current)?);
        let b = graph.input(stack(memory)?);
        let z = self.logits_graph(&mut graph, a, b)?;
        Ok(graph
            .value(z)
            .values()
            .iter()
            .map(|&z| autodiff::sigmoid(z))
            .collect())
    }

    pub fn compare(&self, current: &[S], memory: &[S]) -> Result<S, AutodiffError> {
        Ok(self.compare_batch(&[current], &[memory])?[0])
    }

    /// `R(a, b)` straight from observations.
    pub fn reachability(&self, a: &Observation, b: &Observation) -> Result<S, AutodiffError> {
        let e = self.embed_batch(&[a, b])?;
        self.compare(&e[0], &e[1])
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        autodiff::save(&self.store, path)
    }

    /// Loads parameters saved by [`save`](Self::save) into a model for `rays` rays.
    pub fn load(path: &Path, rays: usize) -> Result<Self, AutodiffError> {
        let mut model = Self::new(rays, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        model.store.load_from(&autodiff::load(path)?)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{fixtures, load_map, render, Heading, Pose, DEFAULT_RAYS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> ReachabilityModel<f64> {
        ReachabilityModel::new(DEFAULT_RAYS, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn embedding_shape_and_determinism() {
        let m = model();
        let map = load_map(fixtures::ROOMS_15, 2).unwrap();
        let obs = render(&map, &map.start_pose(), DEFAULT_RAYS);
        let e = m.embed(&obs).unwrap();
        assert_eq!(e.len(), EMBEDDING_DIM);
        assert_eq!(e, m.embed(&obs).unwrap());
        let other = render(&map, &Pose::new(3, 3, Heading::South), DEFAULT_RAYS);
        let both = m.embed_batch(&[&obs, &other]).unwrap();
        assert_eq!(both[0], e);
    }

    #[test]
    fn scores_are_probabilities() {
        let m = model();
        let map = load_map(fixtures::ROOMS_15, 2).unwrap();
        let a = m
            .embed(&render(&map, &map.start_pose(), DEFAULT_RAYS))
            .unwrap();
        let s = m.compare(&a, &a).unwrap();
        assert!((0.0..=1.0).contains(&s));
        assert_eq!(s, m.compare(&a, &a).unwrap());
        assert!(matches!(
            m.compare(&a[..5], &a),
            Err(AutodiffError::ShapeMismatch(_))
        ));
        let short = render(&map, &map.start_pose(), 16);
        assert!(matches!(
            m.embed(&short),
            Err(AutodiffError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn save_load_roundtrip() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.ckpt");
        m.save(&path).unwrap();
        let back = ReachabilityModel::<f64>::load(&path, DEFAULT_RAYS).unwrap();
        let map = load_map(fixtures::ROOMS_15, 2).unwrap();
        let obs = render(&map, &map.start_pose(), DEFAULT_RAYS);
        assert_eq!(m.embed(&obs).unwrap(), back.embed(&obs).unwrap());
    }
}
