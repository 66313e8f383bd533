use serde::{Deserialize, Serialize};

use super::tensor::{ParamId, ParamStore, Tensor};
use super::AutodiffError;
use crate::scalar::Scalar;

/// Update rule and its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    /// Heavy-ball momentum: `buf = μ·buf + g; p -= lr·buf`.
    SgdMomentum { momentum: f64 },
    /// `v = α·v + (1-α)·g²; p -= lr·g / sqrt(v + ε)`.
    Rmsprop { alpha: f64, eps: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Decoupled decay: `p -= lr·wd·p` before the gradient step.
    pub weight_decay: f64,
    /// Linear learning-rate ramp over this many steps (0 disables).
    #[serde(default)]
    pub warmup_steps: usize,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum { momentum },
            lr,
            weight_decay,
            warmup_steps: 0,
        }
    }

    pub fn rmsprop(lr: f64, alpha: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::Rmsprop { alpha, eps },
            lr,
            weight_decay,
            warmup_steps: 0,
        }
    }
}

/// Optimizer with per-parameter accumulators.
#[derive(Clone, Debug)]
pub struct OptimizerState<S> {
    pub config: OptimizerConfig,
    accumulators: Vec<Option<Tensor<S>>>,
    steps: usize,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            accumulators: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Learning rate applied by the next step.
    pub fn current_lr(&self) -> f64 {
        let w = self.config.warmup_steps;
        if w == 0 {
            self.config.lr
        } else {
            self.config.lr * ((self.steps + 1) as f64 / w as f64).min(1.0)
        }
    }

    /// Updates `params` from their gradients and clears those gradients.
    pub fn step(
        &mut self,
        store: &mut ParamStore<S>,
        params: &[ParamId],
    ) -> Result<(), AutodiffError> {
        if let Some(id) = params.iter().find(|id| store.grad(**id).is_none()) {
            return Err(AutodiffError::MissingGradient(
                store.param(*id).name.clone(),
            ));
        }
        let lr = S::lit(self.current_lr());
        let decay = S::lit(self.config.weight_decay);
        if self.accumulators.len() < store.len() {
            self.accumulators.resize(store.len(), None);
        }
        for &id in params {
            let grad = store.take_grad(id).expect("checked above");
            let shape = grad.shape().to_vec();
            let acc = self.accumulators[id.index()].get_or_insert_with(|| Tensor::zeros(shape));
            let value = store.value_mut(id);
            if value.shape() != grad.shape() || acc.shape() != grad.shape() {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "gradient shape {:?} for parameter {:?}",
                    grad.shape(),
                    value.shape()
                )));
            }
            let (p, g, a) = (value.values_mut(), grad.values(), acc.values_mut());
            match self.config.kind {
                OptimizerKind::SgdMomentum { momentum } => {
                    let mu = S::lit(momentum);
                    for i in 0..p.len() {
                        p[i] -= lr * decay * p[i];
                        a[i] = mu * a[i] + g[i];
                        p[i] -= lr * a[i];
                    }
                }
                OptimizerKind::Rmsprop { alpha, eps } => {
                    let (al, ep) = (S::lit(alpha), S::lit(eps));
                    for i in 0..p.len() {
                        p[i] -= lr * decay * p[i];
                        a[i] = al * a[i] + (S::one() - al) * g[i] * g[i];
                        p[i] -= lr * g[i] / (a[i] + ep).sqrt();
                    }
                }
            }
        }
        self.steps += 1;
        Ok(())
    }
}
