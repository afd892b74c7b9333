pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod moment_basis;
pub mod moment_series;
pub mod nonlinear;
pub mod psys;
pub mod rom;
mod serde_mat;
pub mod siggen;
pub mod sim;

pub use error::{Error, Result};
