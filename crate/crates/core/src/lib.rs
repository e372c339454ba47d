//! Table-to-knowledge-base matching and novel entity discovery for web tables.

pub mod corpus;
pub mod discover;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod headmatch;
pub mod kb;
pub mod learn;
pub mod link;
pub mod pipeline;
pub mod resolve;
pub mod retrieve;
pub mod sim;

pub use error::{Error, Result};
