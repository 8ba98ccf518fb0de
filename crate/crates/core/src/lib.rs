//! Thermodynamic formalism for interval maps with inducing schemes.
#![forbid(unsafe_code)]

pub mod error;
pub mod fit;
pub mod maps;
pub mod scheme;
pub mod shift;
pub mod stats;
pub mod suite;
pub mod thermo;

pub use error::{Error, Result};
