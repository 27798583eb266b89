pub mod dyadic_grid;
pub mod haar_system;
pub mod weights;
pub mod error;
mod fourier;
pub mod function_spaces;
pub mod discrete_operators;
pub mod schatten_spectra;
pub mod symbols;
pub mod verification_harness;
pub mod reporting;
pub mod cli;
pub(crate) mod text_serde;
pub(crate) mod exponent_serde;

pub use error::{Error, Result};
