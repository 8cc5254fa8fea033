pub mod checkpoint;
pub mod dataset;
pub mod distill;
pub mod error;
pub mod eval;
pub mod graph;
pub mod heuristics;
pub mod pipeline;
pub mod propagate;
pub mod scorer;
pub mod seed;
pub mod selection;

pub use error::{Error, Result};
