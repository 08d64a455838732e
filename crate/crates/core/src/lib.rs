//! Monotone neural estimators of conditional distribution functions.

pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod layers;
pub mod models;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
