//! Dense tensors, the gradient tape and the finite-difference oracle.

mod dense;
pub mod gradcheck;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{analytic_gradients, compare_gradients, evaluate, finite_diff_check, GradCheckReport};
pub use tape::{sigmoid, softmax, softmax_in_place, Gradients, Tape, Var, EPS, MASKED_LOGIT};

use rand::Rng;

/// Tensor with entries drawn uniformly from `[lo, hi)`.
pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}
