//! Query-by-document re-ranking over sentence embeddings.

pub mod analysis;
pub mod baselines;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod lexical;
pub mod pipeline;
pub mod rprs;
pub mod synth;
pub mod tune;

pub use error::{Error, Result};
