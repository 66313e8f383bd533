use rand::Rng;

use super::{PolicyError, PolicyOutput};
use crate::env::Action;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionSample {
    pub action: Action,
    pub log_prob: f64,
    pub entropy: f64,
}

/// Normalized probabilities and log-probabilities of a logit vector.
///
/// `-inf` logits get probability zero; NaN, `+inf` or all `-inf` are rejected.
pub fn log_softmax(logits: &[f64]) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
    if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY)
        || logits.iter().all(|l| *l == f64::NEG_INFINITY)
    {
        return Err(PolicyError::NonFiniteLogits(logits.to_vec()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lz = max + z.ln();
    let log_p: Vec<f64> = logits.iter().map(|l| l - lz).collect();
    let p = log_p.iter().map(|lp| lp.exp()).collect();
    Ok((p, log_p))
}

/// Shannon entropy, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64], log_p: &[f64]) -> f64 {
    -p.iter()
        .zip(log_p)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, lp)| p * lp)
        .sum::<f64>()
}

/// Draws an action from `softmax(logits)`.
pub fn sample_action<R: Rng>(
    output: &PolicyOutput,
    rng: &mut R,
) -> Result<ActionSample, PolicyError> {
    let (p, log_p) = log_softmax(&output.logits)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut chosen = None;
    for (i, &pi) in p.iter().enumerate() {
        if pi <= 0.0 {
            continue;
        }
        chosen = Some(i);
        acc += pi;
        if u < acc {
            break;
        }
    }
    let i = chosen.expect("at least one action has positive probability");
    Ok(ActionSample {
        action: Action::from_index(i).expect("three logits"),
        log_prob: log_p[i],
        entropy: entropy(&p, &log_p),
    })
}
