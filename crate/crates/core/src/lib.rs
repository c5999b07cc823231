//! Step-wise, retrieval-grounded answering of first-order logic queries over
//! knowledge graphs.
//!
//! The pipeline is: ingest triples into an abstracted [`kg::KnowledgeGraph`],
//! parse or generate [`query::QueryInstance`]s, compile each query into a
//! single-operator [`plan::Plan`], execute the plan step by step against an
//! [`exec::Answerer`] backend with per-step neighborhood [`retrieve`]al and
//! [`evidence`] rendering, and score the final candidate lists with filtered
//! MRR in [`eval`].

pub mod config;
pub mod eval;
pub mod evidence;
pub mod exec;
pub mod fixtures;
pub mod kg;
pub mod plan;
pub mod query;
pub mod retrieve;

pub use kg::{EntityId, GraphSplit, KnowledgeGraph, RelationId, Triple};
pub use plan::{Plan, Step, StepKind};
pub use query::{QueryAst, QueryInstance, QueryType};
