pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod loss;
pub mod manifold;
pub mod par;
pub mod report;
pub mod ssgd;
pub mod subproblem;
pub mod trimmed;

pub use error::{Error, Result};
