//! Query-based multi-track symbolic music rearrangement.
//!
//! A multi-track 2-bar segment is condensed into a single mixture roll whose
//! latent code carries the content. Every track is summarised by an
//! instrument-agnostic *track function* (onset histograms over pitch and
//! time) whose latent code acts as a query. A Transformer separator answers
//! each query with a track latent that a hierarchical decoder turns back into
//! notes. Swapping the queries for another piece's track functions
//! rearranges the content under a new track system.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod features;
pub mod instrument;
pub mod midi;
pub mod nn;
pub mod rearrange;
pub mod score;
pub mod training;
pub mod voicesep;

pub use error::{Error, Result};
