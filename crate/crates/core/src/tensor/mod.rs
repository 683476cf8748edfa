//! Dense tensors and a reverse-mode gradient tape.

mod ctc;
mod dense;
mod gradcheck;
mod kernels;
mod params;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{finite_difference_check, param_gradient_check, relative_error, GRADIENT_FLOOR};
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var};


#[cfg(test)]
mod tests;
