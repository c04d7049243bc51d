use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{bail, Result};

/// Adam with L2 weight decay folded into the gradient
/// (`g + weight_decay * param`) before the moment updates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `params[i]` pairs with `grads[i]`; the pairing must stay
    /// the same across calls.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            bail!(Shape, "{} parameters but {} gradients", params.len(), grads.len());
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                bail!(Shape, "parameter {:?} vs gradient {:?}", p.shape(), g.shape());
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
        {
            bail!(Shape, "parameter layout changed between Adam steps");
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            let pd = p.data_mut();
            for i in 0..pd.len() {
                let grad = g.data()[i] + self.weight_decay * pd[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * grad;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * grad * grad;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                pd[i] -= self.lr * (mi / c1) / (libm::sqrt(vi / c2) + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut p = Tensor::filled(2, 2, 0.7);
        let mut adam = Adam::new(1e-3, 0.0);
        adam.step(&mut [&mut p], &[Tensor::zeros(2, 2)]).unwrap();
        assert_eq!(p, Tensor::filled(2, 2, 0.7));
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after bias correction: Δ = lr / (1 + eps).
        let mut p = Tensor::filled(1, 1, 0.0);
        let mut adam = Adam::new(1e-3, 0.0);
        adam.step(&mut [&mut p], &[Tensor::filled(1, 1, 1.0)]).unwrap();
        assert!((p.get(0, 0) + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn decay_shrinks_toward_zero() {
        let mut p = Tensor::row_vector(&[2.0, -3.0]);
        let mut adam = Adam::new(1e-2, 1e-1);
        for _ in 0..10 {
            adam.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).unwrap();
        }
        assert!(p.get(0, 0) < 2.0 && p.get(0, 0) > 0.0);
        assert!(p.get(0, 1) > -3.0 && p.get(0, 1) < 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Tensor::zeros(2, 2);
        let mut adam = Adam::new(1e-3, 0.0);
        assert!(adam.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).is_err());
        assert!(adam.step(&mut [&mut p], &[]).is_err());
    }
}
