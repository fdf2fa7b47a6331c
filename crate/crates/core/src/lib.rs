pub mod corpus;
pub mod dataset;
pub mod derivations;
pub mod error;
pub mod eval;
pub mod model;
pub mod rules;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
