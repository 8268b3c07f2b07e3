//! Dense linear algebra, elementary differentiable functions, seeded
//! randomness and finite-difference gradient checking.

mod gradcheck;
mod matrix;
mod ops;
mod rng;

pub use gradcheck::{finite_difference_check, relative_error, GradCheck, DEFAULT_EPSILON};
pub use matrix::{axpy, checked_dot, dot, norm, DenseMatrix};
pub use ops::{log_sum_exp, sigmoid, softmax};
pub(crate) use ops::{softmax_backward, softmax_in_place};
pub use rng::Rng;
