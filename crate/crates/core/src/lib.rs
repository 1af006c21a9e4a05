//! Two-stage knowledge graph and ontology matching.
//!
//! A bi-encoder blocking stage retrieves the top-k nearest textual descriptions
//! per entity to build a high-recall candidate alignment. A cross-encoder (or
//! any [`rerank::PairScorer`]) re-scores the candidates, and a filter chain
//! (confidence cut, maximum-weight bipartite assignment) reduces them to a
//! high-precision one-to-one alignment.
//!
//! The crate also covers training-data generation for the cross-encoder,
//! evaluation with McNemar's test, and the HTTP wire types of the inference
//! sidecar.

pub mod alignment;
pub mod candidates;
pub mod config;
pub mod embed;
pub mod eval;
pub mod filters;
pub mod graph;
pub mod lexical;
pub mod pipeline;
pub mod remote;
pub mod rerank;
pub mod text;
pub mod training;

pub use alignment::{Alignment, Correspondence};
pub use graph::{EntityKind, Iri, KnowledgeGraph};
