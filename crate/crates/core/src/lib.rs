//! Multi-task transformer classification of hate and offensive language.
//!
//! One shared encoder feeds four classification heads (hof, sentiment,
//! emotion, target). Training interleaves mini-batches from every enabled
//! task; each batch updates the encoder and its own head with AdamW.

pub mod autodiff;
pub mod cli;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod grid;
pub mod error;
pub mod metrics;
pub mod model;
pub mod normalize;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
