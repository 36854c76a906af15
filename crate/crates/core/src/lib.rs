//! Predictive multiplicity auditing for knowledge graph embedding link
//! prediction, with rank-aggregation voting to reduce it.
//!
//! The crate covers the full pipeline: loading triple datasets, training
//! embedding models from a seed, filtered ranking evaluation, ε-level sets of
//! retrained models with ambiguity and discrepancy metrics, voting rules over
//! candidate rankings, threshold answer sets, and experiment orchestration.

pub mod answers;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod models;
pub mod multiplicity;
pub mod stats;
pub mod synth;
pub mod train;
pub mod voting;

pub use error::{Error, Result};
pub use eval::{hits_at_k, top_k, EvalOptions, EvalResult, GoldRank, LinkPredictor, QueryRanking, TieMode};
pub use graph::{
    load_graph, queries_from_split, Direction, EntityId, KnowledgeGraph, Query, RelationId, Split, Triple,
};
pub use models::{EmbeddingModel, LossKind, Method, ModelConfig, OptimizerKind};
pub use multiplicity::{
    build_level_set, discrepancy_bound, evaluate_with_aggregation, AuditOptions, ConflictMatrix, LevelSet,
    MultiplicityReport,
};
pub use train::{train, TrainRun};
pub use voting::{aggregate, AggregatedModel, AggregatedRanking, Ballot, Profile, VotingRule};
