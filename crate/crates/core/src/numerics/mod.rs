//! Dense kernels, the reverse-mode tape and layer primitives.

mod adam;
mod layers;
mod tape;
mod tensor;

pub use adam::Adam;
pub use layers::{
    batch_norm, dropout, gumbel_softmax, gumbel_softmax_weights, softmax_vec, BatchNormState,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Smallest probability fed to a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// `p` clamped below at [`PROB_FLOOR`]; NaN stays NaN.
pub fn clamp_prob(p: f64) -> f64 {
    if p < PROB_FLOOR {
        PROB_FLOOR
    } else {
        p
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}
