//! Active preference learning for ordering a pool of items from noisy
//! pairwise comparisons.

pub mod bounds;
pub mod data;
pub mod error;
pub mod harness;
pub mod info_matrix;
pub mod learner;
pub mod logistic;
pub mod models;
pub mod rng;
pub mod samplers;
pub mod session;
pub mod sim;

pub use error::{Error, Result};
pub use nalgebra;
