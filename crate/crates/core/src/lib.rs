//! Core library for `datascout`, a multi-stage hybrid search engine for
//! heterogeneous scientific-metadata catalogs.
//!
//! The search pipeline is organized in three stages:
//!
//! - **Query understanding** ([`understanding`]): intent classification
//!   (specific data request vs broad research goal), query rewriting for
//!   goal-style queries, and extraction of temporal/spatial constraints.
//! - **High-recall retrieval** ([`lexical`], [`semantic`], [`pipeline`]):
//!   BM25 over an inverted index plus brute-force cosine search over
//!   embedded metadata, with abbreviation expansion applied at index time,
//!   merged by reciprocal rank fusion.
//! - **Reranking** ([`pipeline`]): a pluggable reranker (deterministic
//!   baseline or LLM-backed) reorders the head of the fused list.
//!
//! [`catalog`] holds the normalized metadata records the engine searches,
//! [`textproc`] the tokenizer and abbreviation machinery shared by both
//! retrieval paths, and [`evalbench`] the evaluation harness (Recall@K,
//! MRR, MAP) together with literature-grounded benchmark construction.

pub mod catalog;
pub mod evalbench;
pub mod lexical;
pub mod persist;
pub mod pipeline;
pub mod semantic;
pub mod textproc;
pub mod understanding;

pub use catalog::{Catalog, CatalogRecord, Source};
pub use pipeline::{ScoredCandidate, SearchEngine};
pub use understanding::UnderstoodQuery;
