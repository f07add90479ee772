//! Adversarially regularized graph autoencoders over citation graphs.

pub mod checkpoint;
pub mod cluster;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod linkpred;
pub mod models;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
