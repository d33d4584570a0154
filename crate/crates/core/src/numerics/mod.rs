//! Dense linear algebra, seeded randomness, and a finite-difference gradient
//! oracle.

mod gradcheck;
mod matrix;
mod rng;
mod vector;

pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use matrix::{matvec, DenseMatrix};
pub use rng::SeededRng;
pub use vector::{relu, DenseVector};
