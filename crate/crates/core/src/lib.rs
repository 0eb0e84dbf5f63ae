pub mod applications;
pub mod dense;
pub mod error;
pub mod graph;
pub mod pauli;
pub mod protocol;
pub mod sources;
pub mod spectral;

pub use error::{Error, Result};
