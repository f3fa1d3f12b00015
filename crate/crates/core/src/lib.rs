pub mod cli;
pub mod conjugate_models;
pub mod covariance;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod model_selection;
pub mod nngp_factor;
pub mod prediction;
pub mod rng;
pub mod sparse_solver;

pub use error::{Error, Result};
