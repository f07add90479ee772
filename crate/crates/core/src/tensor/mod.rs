//! Dense/sparse matrices, a reverse-mode tape over them, RNG and a
//! finite-difference gradient checker.

mod dense;
mod gradcheck;
mod gram_bce;
pub mod numeric;
mod rng;
mod sparse;
mod tape;

pub use dense::{dot, DenseMat};
pub use gradcheck::{check_gradients, relative_error, GradCheckReport, GRAD_SCALE_FLOOR};
pub use rng::Rng;
pub use sparse::SparseMat;
pub use tape::{weighted_bce_value, Gradients, Tape, Var};
