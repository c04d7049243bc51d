use alloc::vec::Vec;

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{bail, Result};

/// Numerically stable softmax of one vector.
pub fn softmax_vec(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Running statistics and constants of one batch-norm layer. The affine
/// parameters live with the other trainables.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(dim: usize) -> Self {
        Self {
            running_mean: alloc::vec![0.0; dim],
            running_var: alloc::vec![1.0; dim],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Batch normalization over rows.
///
/// Train mode normalizes with the batch statistics and folds them into the
/// running estimates (variance with Bessel's correction). Eval mode uses the
/// running estimates only.
pub fn batch_norm(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &mut BatchNormState,
    train: bool,
) -> Result<Var> {
    let cols = tape.value(x).cols();
    if state.running_mean.len() != cols {
        bail!(Shape, "batch norm state has {} columns, input {cols}", state.running_mean.len());
    }
    if train {
        let n = tape.value(x).rows() as f64;
        let (out, mean, var) = tape.batch_norm_train(x, gamma, beta, state.eps)?;
        let m = state.momentum;
        for j in 0..cols {
            state.running_mean[j] = (1.0 - m) * state.running_mean[j] + m * mean[j];
            let unbiased = var[j] * n / (n - 1.0);
            state.running_var[j] = (1.0 - m) * state.running_var[j] + m * unbiased;
        }
        Ok(out)
    } else {
        let scale: Vec<f64> = state.running_var.iter().map(|v| 1.0 / libm::sqrt(v + state.eps)).collect();
        tape.affine_cols(x, gamma, beta, &state.running_mean, &scale)
    }
}

/// Inverted dropout: zero each entry with probability `rate`, scale the
/// survivors by `1 / (1 - rate)`.
pub fn dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        bail!(Config, "dropout rate must lie in [0, 1), got {rate}");
    }
    if rate == 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.value(x).shape();
    let keep = 1.0 / (1.0 - rate);
    let mask = Tensor::from_fn(r, c, |_, _| if rng.gen::<f64>() < rate { 0.0 } else { keep });
    let m = tape.constant(mask);
    tape.hadamard(x, m)
}

fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -libm::log(-libm::log(u))
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Gumbel-Softmax weights for one logit vector.
///
/// With `rng = None` no noise is added and the result is
/// `softmax(logits / tau)`. `hard` returns the one-hot argmax of the relaxed
/// weights.
pub fn gumbel_softmax_weights<R: Rng + ?Sized>(
    logits: &[f64],
    tau: f64,
    rng: Option<&mut R>,
    hard: bool,
) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        bail!(Config, "temperature must be positive, got {tau}");
    }
    if logits.is_empty() {
        bail!(Config, "gumbel softmax needs at least one logit");
    }
    let perturbed: Vec<f64> = match rng {
        Some(rng) => logits.iter().map(|&l| (l + gumbel_noise(rng)) / tau).collect(),
        None => logits.iter().map(|&l| (l + 0.0) / tau).collect(),
    };
    let soft = softmax_vec(&perturbed);
    if hard {
        let best = argmax(&soft);
        Ok((0..soft.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect())
    } else {
        Ok(soft)
    }
}

/// Row-wise Gumbel-Softmax on the tape. `logits` is `rows x K`.
///
/// `hard` emits one-hot rows in the forward pass and differentiates through
/// the soft weights (straight-through).
pub fn gumbel_softmax<R: Rng + ?Sized>(
    tape: &mut Tape,
    logits: Var,
    tau: f64,
    rng: Option<&mut R>,
    hard: bool,
) -> Result<Var> {
    if !(tau > 0.0) {
        bail!(Config, "temperature must be positive, got {tau}");
    }
    let (r, k) = tape.value(logits).shape();
    if k == 0 {
        bail!(Config, "gumbel softmax needs at least one logit");
    }
    let shifted = match rng {
        Some(rng) => {
            let noise = tape.constant(Tensor::from_fn(r, k, |_, _| gumbel_noise(rng)));
            tape.add(logits, noise)?
        }
        None => logits,
    };
    let scaled = tape.scale(shifted, 1.0 / tau)?;
    let soft = tape.softmax(scaled)?;
    if !hard {
        return Ok(soft);
    }
    let sv = tape.value(soft);
    let mut onehot = Tensor::zeros(r, k);
    for i in 0..r {
        onehot.set(i, argmax(sv.row(i)), 1.0);
    }
    tape.straight_through(onehot, soft)
}
