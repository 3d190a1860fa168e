//! Dense matrices and the seeded random source everything else builds on.

mod matrix;
mod random;

pub use matrix::{dot, gemm, Matrix, Trans};
pub use random::RandomSource;
