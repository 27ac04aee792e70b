//! Differentiable Fourier-pseudospectral PDE toolkit with neural-operator
//! students and projected-gradient attacks that backpropagate through the
//! solver.

pub mod adv_train;
pub mod attack;
pub mod dataset;
pub mod diagnostics;
pub mod diff;
pub mod error;
pub mod grf;
pub mod io;
pub mod losses;
pub mod operators;
pub mod solvers;
pub mod spectral;
pub mod timing;

pub use error::{Error, Result};
