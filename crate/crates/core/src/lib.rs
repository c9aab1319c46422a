//! Lifelong learning for first-stage retrieval with a replay memory and
//! backward-compatible document representations.
//!
//! The crate simulates the full update loop of a dense retriever that keeps
//! learning as unlabeled document batches arrive in sessions: BM25 candidate
//! filtering, diverse support-negative selection, replay from a per-query
//! memory buffer, compatible training objectives, and an embedding index
//! that is extended instead of rebuilt. Everything is deterministic under a
//! fixed seed and runs at desk scale on synthetic drift benchmarks.
//!
//! Module map:
//!
//! - [`geometry`]: projections and the PSS/ISD selection criteria
//! - [`lexical`]: Okapi BM25 inverted index for candidate filtering
//! - [`encoder`]: hashed bag-of-tokens dual encoder scored by dot product
//! - [`losses`]: contrastive / compatible ranking / alignment objectives
//! - [`memory`]: per-query replay buffer with diversity-driven updates
//! - [`selection`]: support-negative selection from new data
//! - [`store`]: the retrieval index with re-embedding cost accounting
//! - [`benchmark`]: synthetic session streams with distribution drift
//! - [`metrics`]: retrieval and lifelong-learning metrics
//! - [`runner`]: session orchestration for all methods and baselines
//!
//! The crate is `no_std`-compatible (requires `alloc`); the companion CLI
//! crate carries file formats and IO.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

use alloc::string::String;
use core::fmt;

pub mod benchmark;
pub mod encoder;
pub mod geometry;
pub mod lexical;
pub mod losses;
mod math;
pub mod memory;
pub mod metrics;
pub mod runner;
pub mod selection;
pub mod store;

/// Document identifier. Ordering is lexicographic and used for all
/// deterministic tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DocId(String);

impl DocId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DocId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// Query identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QueryId(String);

impl QueryId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for QueryId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}
