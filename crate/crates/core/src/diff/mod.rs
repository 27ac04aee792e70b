//! Reverse-mode differentiation over a fixed primitive vocabulary.
//!
//! A [`Tape`] records each primitive as it is applied, evaluating eagerly.
//! [`Tape::vjp`] runs one reverse sweep with a hand-written adjoint per
//! primitive. Complex values are treated as pairs of reals: the cotangent of
//! a complex entry `z` is `∂ℓ/∂Re z + i ∂ℓ/∂Im z`.

mod check;
mod tape;

pub use check::{dot_product_test, fd_check, FdReport};
pub use tape::{Activation, Gradients, MixLayout, Primitive, Tape, Value, Var};

pub(crate) use tape::{softdtw_table, DP_SENTINEL};
