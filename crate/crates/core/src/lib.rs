pub mod autodiff;
pub mod error;
pub mod evaluation;
pub mod factor_nn;
pub mod gp;
pub mod ic;
pub mod indicators;
pub mod market;
pub mod pipeline;
pub mod stats;

pub use error::{Error, Result};
