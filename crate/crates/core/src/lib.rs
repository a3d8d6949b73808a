pub mod averaging;
pub mod dde_sim;
pub mod delay_measures;
pub mod distribution_analysis;
pub mod error;
pub mod fde_core;
pub mod problem;
pub mod quadrature;

pub use error::{Error, Result};
