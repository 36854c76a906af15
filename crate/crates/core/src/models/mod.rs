//! Embedding models: configuration, parameter tables, scoring and the JSON
//! checkpoint container.

mod scoring;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, Query, Triple};

pub use scoring::{accumulate_grad, score as score_rows, Method};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// Hinge loss over (positive, negative) pairs with margin `margin`.
    MarginRanking { margin: f64 },
    /// Logistic loss over labelled positives and negatives.
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
}

fn default_batch_size() -> usize {
    128
}

fn default_init_scale() -> f64 {
    0.5
}

/// Everything that determines a training run, seed included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub method: Method,
    pub embedding_dim: usize,
    pub loss: LossKind,
    pub negatives_per_positive: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub l2_weight: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Parameters start uniform in `±init_scale / sqrt(dim)`.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Resample negatives that happen to be known-true triples.
    #[serde(default)]
    pub filtered_negatives: bool,
}

impl ModelConfig {
    /// Desk-scale defaults; not tuned by any hyperparameter search.
    pub fn new(method: Method, embedding_dim: usize) -> Self {
        ModelConfig {
            method,
            embedding_dim,
            loss: LossKind::CrossEntropy,
            negatives_per_positive: 10,
            learning_rate: 0.1,
            epochs: 100,
            seed: 0,
            optimizer: OptimizerKind::Adagrad,
            l2_weight: 1e-4,
            batch_size: default_batch_size(),
            init_scale: default_init_scale(),
            filtered_negatives: false,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ModelConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be positive");
        }
        if self.negatives_per_positive == 0 {
            return fail("negatives_per_positive must be positive");
        }
        if self.epochs == 0 {
            return fail("epochs must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive and finite");
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return fail("l2_weight must be non-negative");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return fail("init_scale must be positive");
        }
        if let LossKind::MarginRanking { margin } = self.loss {
            if !(margin > 0.0 && margin.is_finite()) {
                return fail("margin must be positive");
            }
        }
        Ok(())
    }

    pub fn entity_width(&self) -> usize {
        self.method.entity_width(self.embedding_dim)
    }

    pub fn relation_width(&self) -> usize {
        self.method.relation_width(self.embedding_dim)
    }
}

/// A trained (or freshly initialised) scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub config: ModelConfig,
    pub num_entities: usize,
    pub num_relations: usize,
    /// Row-major `num_entities x entity_width`.
    pub entity_table: Vec<f64>,
    /// Row-major `num_relations x relation_width`.
    pub relation_table: Vec<f64>,
    pub trained_epochs: usize,
    pub dataset_hash: String,
    pub epoch_losses: Vec<f64>,
}

impl EmbeddingModel {
    pub fn zeros(config: ModelConfig, graph: &KnowledgeGraph) -> Self {
        let ne = graph.num_entities();
        let nr = graph.num_relations();
        EmbeddingModel {
            entity_table: vec![0.0; ne * config.entity_width()],
            relation_table: vec![0.0; nr * config.relation_width()],
            config,
            num_entities: ne,
            num_relations: nr,
            trained_epochs: 0,
            dataset_hash: graph.dataset_hash().to_owned(),
            epoch_losses: Vec::new(),
        }
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    pub fn entity(&self, e: EntityId) -> &[f64] {
        let w = self.config.entity_width();
        &self.entity_table[e.index() * w..(e.index() + 1) * w]
    }

    pub fn relation(&self, r: crate::graph::RelationId) -> &[f64] {
        let w = self.config.relation_width();
        &self.relation_table[r.index() * w..(r.index() + 1) * w]
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    pub fn check_triple(&self, t: &Triple) -> Result<()> {
        for e in [t.head, t.tail] {
            if e.index() >= self.num_entities {
                return Err(Error::OutOfBounds {
                    kind: "entity",
                    id: e.index(),
                    len: self.num_entities,
                });
            }
        }
        if t.relation.index() >= self.num_relations {
            return Err(Error::OutOfBounds {
                kind: "relation",
                id: t.relation.index(),
                len: self.num_relations,
            });
        }
        Ok(())
    }

    pub fn score(&self, t: &Triple) -> Result<f64> {
        self.check_triple(t)?;
        Ok(self.score_unchecked(t))
    }

    #[inline]
    pub(crate) fn score_unchecked(&self, t: &Triple) -> f64 {
        score_rows(
            self.config.method,
            self.config.embedding_dim,
            self.entity(t.head),
            self.relation(t.relation),
            self.entity(t.tail),
        )
    }

    /// Scores `tr(query, e)` for every entity `e`, in id order.
    pub fn score_all_candidates(&self, query: &Query) -> Result<Vec<f64>> {
        self.check_triple(&query.gold_triple())?;
        Ok((0..self.num_entities as u32)
            .map(|e| self.score_unchecked(&query.triple_for(EntityId(e))))
            .collect())
    }

    pub fn is_finite(&self) -> bool {
        self.entity_table.iter().all(|x| x.is_finite())
            && self.relation_table.iter().all(|x| x.is_finite())
    }

    /// Errors unless both models were trained on the same dataset.
    pub fn check_compatible(&self, other: &EmbeddingModel) -> Result<()> {
        if self.dataset_hash != other.dataset_hash
            || self.num_entities != other.num_entities
            || self.num_relations != other.num_relations
        {
            return Err(Error::Incompatible(format!(
                "dataset {} ({} entities) vs {} ({} entities)",
                short(&self.dataset_hash),
                self.num_entities,
                short(&other.dataset_hash),
                other.num_entities
            )));
        }
        Ok(())
    }

    /// Checkpoint bytes: deterministic JSON of the whole model.
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    /// SHA-256 of the checkpoint bytes.
    pub fn checkpoint_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_checkpoint_bytes()?)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes()?).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint and verifies it belongs to `graph`.
    pub fn load(path: &Path, graph: &KnowledgeGraph) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes, graph)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8], graph: &KnowledgeGraph) -> Result<Self> {
        let model: EmbeddingModel = serde_json::from_slice(bytes)?;
        if model.dataset_hash != graph.dataset_hash() {
            return Err(Error::Checkpoint(format!(
                "dataset hash mismatch: checkpoint {} vs graph {}",
                short(&model.dataset_hash),
                short(graph.dataset_hash())
            )));
        }
        model.config.validate()?;
        if model.num_entities != graph.num_entities()
            || model.num_relations != graph.num_relations()
            || model.entity_table.len() != model.num_entities * model.config.entity_width()
            || model.relation_table.len() != model.num_relations * model.config.relation_width()
        {
            return Err(Error::Checkpoint("table shapes do not match config".into()));
        }
        if !model.is_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        Ok(model)
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
