use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::{ParamId, ParamStore, Tensor};
use super::AutodiffError;
use crate::scalar::Scalar;

/// Configuration of one layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// Affine map; inputs with more than two dimensions are flattened per row.
    Linear {
        input: usize,
        output: usize,
        bias: bool,
    },
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ReLU,
    LayerNorm {
        dim: usize,
    },
    MultiHeadAttention {
        query_dim: usize,
        memory_dim: usize,
        hidden: usize,
        heads: usize,
    },
    Softmax,
    Sigmoid,
    Embedding {
        count: usize,
        dim: usize,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<(), AutodiffError> {
        let positive = |dims: &[usize]| dims.iter().all(|&d| d > 0);
        let ok = match *self {
            LayerSpec::Linear { input, output, .. } => positive(&[input, output]),
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => positive(&[in_channels, out_channels, kernel, stride]),
            LayerSpec::LayerNorm { dim } => dim > 0,
            LayerSpec::MultiHeadAttention {
                query_dim,
                memory_dim,
                hidden,
                heads,
            } => positive(&[query_dim, memory_dim, hidden, heads]) && hidden % heads == 0,
            LayerSpec::Embedding { count, dim } => positive(&[count, dim]),
            LayerSpec::ReLU | LayerSpec::Softmax | LayerSpec::Sigmoid => true,
        };
        if ok {
            Ok(())
        } else {
            Err(AutodiffError::ShapeMismatch(format!(
                "invalid layer spec {self:?}"
            )))
        }
    }
}

fn fan_in_init<S: Scalar, R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<S> {
    Tensor::uniform(shape, 6f64.sqrt() / (fan_in as f64).sqrt(), rng)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_init(vec![output, input], input, rng),
        );
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                fan_in_init(vec![output], input, rng),
            )
        });
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn apply<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_init(vec![out_channels, in_channels, kernel], fan_in, rng),
        );
        let bias = store.add(
            format!("{name}.bias"),
            fan_in_init(vec![out_channels], fan_in, rng),
        );
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn apply<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::filled(vec![dim], S::one()));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![dim]));
        Self { gamma, beta }
    }

    pub fn apply<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub count: usize,
}

impl Embedding {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        count: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let table = store.add(
            format!("{name}.table"),
            fan_in_init(vec![count, dim], dim, rng),
        );
        Self { table, count }
    }

    pub fn lookup<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        index: Vec<usize>,
    ) -> Result<Var, AutodiffError> {
        let t = g.param(store, self.table);
        g.gather(t, index)
    }
}

/// Memory rows for a batch of attention queries.
///
/// Row `r` of the memory attended by query `i` (for `offsets[i] <= r < offsets[i+1]`)
/// is `entries[entry[r]] + ages[age[r]]`, i.e. a stored vector plus its
/// temporal embedding. The projections are linear, so they are applied to the
/// distinct entries and age vectors before the per-row gather.
#[derive(Clone, Copy, Debug)]
pub struct MemoryRows<'a> {
    pub entries: Var,
    pub ages: Option<Var>,
    pub entry: &'a [usize],
    pub age: &'a [usize],
    pub offsets: &'a [usize],
}

/// Multi-head attention of one query vector over a variable-length memory.
///
/// The output projection has no bias, so an empty memory yields exactly zero.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
    pub hidden: usize,
}

impl MultiHeadAttention {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        query_dim: usize,
        memory_dim: usize,
        hidden: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        LayerSpec::MultiHeadAttention {
            query_dim,
            memory_dim,
            hidden,
            heads,
        }
        .validate()?;
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), query_dim, hidden, true, rng),
            key: Linear::new(store, &format!("{name}.k"), memory_dim, hidden, true, rng),
            value: Linear::new(store, &format!("{name}.v"), memory_dim, hidden, true, rng),
            out: Linear::new(store, &format!("{name}.o"), hidden, query_dim, false, rng),
            heads,
            hidden,
        })
    }

    /// Attention over explicit memory rows `[R, memory_dim]` split by `offsets`.
    pub fn attend<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        query: Var,
        memory: Var,
        offsets: Vec<usize>,
    ) -> Result<Var, AutodiffError> {
        let q = self.query.apply(g, store, query)?;
        let k = self.key.apply(g, store, memory)?;
        let v = self.value.apply(g, store, memory)?;
        let ctx = g.attend(q, k, v, offsets, self.heads)?;
        self.out.apply(g, store, ctx)
    }

    /// Attention over factored memory rows (stored entry + age vector).
    pub fn attend_rows<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        query: Var,
        memory: MemoryRows<'_>,
    ) -> Result<Var, AutodiffError> {
        if memory.entry.len() != memory.age.len() {
            return Err(AutodiffError::ShapeMismatch(
                "memory entry and age index lengths differ".into(),
            ));
        }
        let q = self.query.apply(g, store, query)?;
        let project = |g: &mut Graph<S>, lin: &Linear| -> Result<Var, AutodiffError> {
            let per_entry = lin.apply(g, store, memory.entries)?;
            let mut rows = g.gather(per_entry, memory.entry.to_vec())?;
            if let Some(ages) = memory.ages {
                let w = g.param(store, lin.weight);
                let per_age = g.linear(ages, w, None)?;
                let age_rows = g.gather(per_age, memory.age.to_vec())?;
                rows = g.add(rows, age_rows)?;
            }
            Ok(rows)
        };
        let k = project(g, &self.key)?;
        let v = project(g, &self.value)?;
        let ctx = g.attend(q, k, v, memory.offsets.to_vec(), self.heads)?;
        self.out.apply(g, store, ctx)
    }
}

/// A parameterised layer in a [`Sequential`] chain.
#[derive(Clone, Debug)]
pub enum Layer {
    Linear(Linear),
    Conv1d(Conv1d),
    ReLU,
    LayerNorm(LayerNorm),
    Softmax,
    Sigmoid,
    /// Interprets the (integer-valued) input as row indices into a table.
    Embedding(Embedding),
    /// Self-attention of each row over all rows of the input.
    MultiHeadAttention(MultiHeadAttention),
}

impl Layer {
    pub fn build<S: Scalar, R: Rng>(
        spec: &LayerSpec,
        store: &mut ParamStore<S>,
        name: &str,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        spec.validate()?;
        Ok(match *spec {
            LayerSpec::Linear {
                input,
                output,
                bias,
            } => Layer::Linear(Linear::new(store, name, input, output, bias, rng)),
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => Layer::Conv1d(Conv1d::new(
                store,
                name,
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                rng,
            )),
            LayerSpec::ReLU => Layer::ReLU,
            LayerSpec::LayerNorm { dim } => Layer::LayerNorm(LayerNorm::new(store, name, dim)),
            LayerSpec::MultiHeadAttention {
                query_dim,
                memory_dim,
                hidden,
                heads,
            } => {
                if query_dim != memory_dim {
                    return Err(AutodiffError::ShapeMismatch(
                        "self-attention needs query_dim == memory_dim".into(),
                    ));
                }
                Layer::MultiHeadAttention(MultiHeadAttention::new(
                    store, name, query_dim, memory_dim, hidden, heads, rng,
                )?)
            }
            LayerSpec::Softmax => Layer::Softmax,
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::Embedding { count, dim } => {
                Layer::Embedding(Embedding::new(store, name, count, dim, rng))
            }
        })
    }

    pub fn apply<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        match self {
            Layer::Linear(l) => l.apply(g, store, x),
            Layer::Conv1d(c) => c.apply(g, store, x),
            Layer::ReLU => Ok(g.relu(x)),
            Layer::LayerNorm(l) => l.apply(g, store, x),
            Layer::Softmax => Ok(g.softmax(x)),
            Layer::Sigmoid => Ok(g.sigmoid(x)),
            Layer::Embedding(e) => {
                let index = g
                    .value(x)
                    .values()
                    .iter()
                    .map(|v| {
                        let i = v
                            .to_usize()
                            .filter(|&i| i < e.count && S::from_usize(i) == Some(*v));
                        i.ok_or_else(|| {
                            AutodiffError::ShapeMismatch(format!("embedding index {v} invalid"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                e.lookup(g, store, index)
            }
            Layer::MultiHeadAttention(m) => {
                let rows = g.value(x).rows();
                let offsets: Vec<usize> = (0..=rows).map(|i| i * rows).collect();
                let index: Vec<usize> = (0..rows).flat_map(|_| 0..rows).collect();
                let memory = g.gather(x, index)?;
                m.attend(g, store, x, memory, offsets)
            }
        }
    }
}

/// A chain of layers with retained activations between `forward` and `backward`.
pub struct Sequential<S: Scalar> {
    pub layers: Vec<Layer>,
    pub store: ParamStore<S>,
    pass: Option<(Graph<S>, Var)>,
}

impl<S: Scalar> Sequential<S> {
    pub fn new<R: Rng>(specs: &[LayerSpec], rng: &mut R) -> Result<Self, AutodiffError> {
        let mut store = ParamStore::new();
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| Layer::build(spec, &mut store, &format!("layer{i}"), rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            layers,
            store,
            pass: None,
        })
    }

    pub fn forward(&mut self, input: Tensor<S>) -> Result<Tensor<S>, AutodiffError> {
        let mut g = Graph::new();
        let mut x = g.input(input);
        for layer in &self.layers {
            x = layer.apply(&mut g, &self.store, x)?;
        }
        let out = g.value(x).clone();
        self.pass = Some((g, x));
        Ok(out)
    }

    /// Accumulates parameter gradients for the last forward pass.
    pub fn backward(&mut self, upstream: &Tensor<S>) -> Result<(), AutodiffError> {
        let (mut g, out) = self.pass.take().ok_or(AutodiffError::NoForwardPass)?;
        let grads = g.backward(out, upstream)?;
        drop(g);
        self.store.accumulate(grads);
        Ok(())
    }
}

/// `(kernel, stride, out_channels, padding)` of the observation encoder convolutions.
pub const CONV_LADDER: [(usize, usize, usize, usize); 3] =
    [(9, 5, 32, 4), (7, 4, 64, 3), (5, 3, 128, 2)];

/// Observation encoder: the conv ladder with ReLUs, flattened, then a linear map.
///
/// Input `[N, channels, rays]`, output `[N, output]`.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    pub convs: Vec<Conv1d>,
    pub proj: Linear,
    pub channels: usize,
    pub rays: usize,
}

impl ConvEncoder {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        channels: usize,
        rays: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let mut convs = Vec::new();
        let (mut c, mut len) = (channels, rays);
        for (i, &(kernel, stride, out, pad)) in CONV_LADDER.iter().enumerate() {
            if len + 2 * pad < kernel {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "{rays} rays too few for the conv ladder"
                )));
            }
            convs.push(Conv1d::new(
                store,
                &format!("{name}.conv{i}"),
                c,
                out,
                kernel,
                stride,
                pad,
                rng,
            ));
            len = (len + 2 * pad - kernel) / stride + 1;
            c = out;
        }
        let proj = Linear::new(store, &format!("{name}.proj"), c * len, output, true, rng);
        Ok(Self {
            convs,
            proj,
            channels,
            rays,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.proj.output
    }

    pub fn apply<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        let n = g.value(x).len() / (self.channels * self.rays).max(1);
        let mut h = g.reshape(x, vec![n, self.channels, self.rays])?;
        for conv in &self.convs {
            let y = conv.apply(g, store, h)?;
            h = g.relu(y);
        }
        let h = g.reshape(h, vec![n, self.proj.input])?;
        self.proj.apply(g, store, h)
    }
}
