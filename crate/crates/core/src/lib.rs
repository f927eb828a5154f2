//! Matched-pair estimation of the direct effect of a declared author
//! attribute on community judgments, with the supporting text extraction,
//! topic modeling, embedding, propensity scoring and statistics.

pub mod annotate;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod extraction;
pub mod matching;
pub mod pipeline;
pub mod propensity;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod topics;

pub use corpus::{BotList, Comment, Document};
pub use error::{Error, Result};
