//! Iterative cross-modal posterior refinement for dynamic text-attributed
//! graphs: data handling, the refinement model, its training objective, and
//! the link-prediction / retrieval evaluation protocol.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
