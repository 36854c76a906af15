//! Ranks, top-K membership and Hits@K.
//!
//! The rank of an entity counts the unmasked candidates scoring strictly
//! higher, plus one. Candidates tied with the gold answer do not push it
//! down (optimistic ties); Hits@K can also be computed with pessimistic or
//! mean tie handling.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, Query};
use crate::models::EmbeddingModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieMode {
    #[default]
    Optimistic,
    Pessimistic,
    Mean,
}

/// One model's scored ordering of all candidates for a query.
#[derive(Debug, Clone)]
pub struct QueryRanking {
    pub query: Query,
    pub scores: Vec<f64>,
    /// All entities by descending score, ascending id among equal scores.
    pub order: Vec<EntityId>,
    /// `true` for known-true answers other than gold (filtered setting).
    pub masked: Vec<bool>,
}

impl QueryRanking {
    pub fn new(query: Query, scores: Vec<f64>, masked: Vec<bool>) -> Result<Self> {
        if scores.len() != masked.len() {
            return Err(Error::Parameter(format!(
                "{} scores but {} mask entries",
                scores.len(),
                masked.len()
            )));
        }
        if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Data(format!("non-finite score for entity {bad}")));
        }
        let gold = query.gold.index();
        if gold >= scores.len() {
            return Err(Error::OutOfBounds {
                kind: "entity",
                id: gold,
                len: scores.len(),
            });
        }
        if masked[gold] {
            return Err(Error::QueryContract("gold answer is masked".into()));
        }
        let mut order: Vec<EntityId> = (0..scores.len() as u32).map(EntityId).collect();
        order.sort_by(|a, b| {
            scores[b.index()]
                .total_cmp(&scores[a.index()])
                .then(a.cmp(b))
        });
        Ok(QueryRanking {
            query,
            scores,
            order,
            masked,
        })
    }

    /// Scores every candidate with `model`; masks known answers when `filtered`.
    pub fn from_model(
        model: &EmbeddingModel,
        graph: &KnowledgeGraph,
        query: &Query,
        filtered: bool,
    ) -> Result<Self> {
        let scores = model.score_all_candidates(query)?;
        let masked = if filtered {
            graph.filter_mask(query)
        } else {
            vec![false; scores.len()]
        };
        Self::new(*query, scores, masked)
    }

    fn check(&self, entity: EntityId) -> Result<f64> {
        let i = entity.index();
        if i >= self.scores.len() {
            return Err(Error::OutOfBounds {
                kind: "entity",
                id: i,
                len: self.scores.len(),
            });
        }
        if self.masked[i] {
            return Err(Error::QueryContract(format!("entity {entity} is masked")));
        }
        Ok(self.scores[i])
    }

    /// `1 + |{unmasked d != entity : score(d) > score(entity)}|`
    pub fn rank_of(&self, entity: EntityId) -> Result<usize> {
        let s = self.check(entity)?;
        Ok(1 + self
            .scores
            .iter()
            .zip(&self.masked)
            .filter(|&(&d, &m)| !m && d > s)
            .count())
    }

    /// Like [`rank_of`](Self::rank_of) but every tied candidate counts as ahead.
    pub fn pessimistic_rank_of(&self, entity: EntityId) -> Result<usize> {
        let s = self.check(entity)?;
        Ok(self
            .scores
            .iter()
            .zip(&self.masked)
            .filter(|&(&d, &m)| !m && d >= s)
            .count())
    }

    pub fn unmasked_candidates(&self) -> Vec<EntityId> {
        (0..self.scores.len() as u32)
            .map(EntityId)
            .filter(|e| !self.masked[e.index()])
            .collect()
    }
}

pub fn top_k(ranking: &QueryRanking, entity: EntityId, k: usize) -> Result<bool> {
    if k < 1 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    Ok(ranking.rank_of(entity)? <= k)
}

/// Gold-answer rank under both tie conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldRank {
    pub optimistic: usize,
    pub pessimistic: usize,
}

impl GoldRank {
    pub fn exact(rank: usize) -> Self {
        GoldRank {
            optimistic: rank,
            pessimistic: rank,
        }
    }

    pub fn in_top_k(&self, k: usize, ties: TieMode) -> bool {
        match ties {
            TieMode::Optimistic => self.optimistic <= k,
            TieMode::Pessimistic => self.pessimistic <= k,
            TieMode::Mean => (self.optimistic + self.pessimistic) as f64 / 2.0 <= k as f64,
        }
    }

    pub fn is_tied(&self) -> bool {
        self.optimistic != self.pessimistic
    }
}

/// Anything that can rank the candidates of a query: a trained embedding
/// model or an aggregate of several.
pub trait LinkPredictor: Sync {
    fn gold_rank(&self, graph: &KnowledgeGraph, query: &Query, filtered: bool) -> Result<GoldRank>;
}

impl LinkPredictor for EmbeddingModel {
    fn gold_rank(&self, graph: &KnowledgeGraph, query: &Query, filtered: bool) -> Result<GoldRank> {
        let ranking = QueryRanking::from_model(self, graph, query, filtered)?;
        Ok(GoldRank {
            optimistic: ranking.rank_of(query.gold)?,
            pessimistic: ranking.pessimistic_rank_of(query.gold)?,
        })
    }
}

/// Evaluation options shared by every metric that reads top-K flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub k: usize,
    pub filtered: bool,
    pub ties: TieMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k: 10,
            filtered: true,
            ties: TieMode::Optimistic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub k: usize,
    /// Optimistic gold rank per query.
    pub ranks: Vec<usize>,
    pub top_k: Vec<bool>,
    pub hits_at_k: f64,
    /// Queries whose gold answer shares its score with another candidate.
    pub tied_queries: usize,
}

impl EvalResult {
    pub fn hits_count(&self) -> usize {
        self.top_k.iter().filter(|&&f| f).count()
    }
}

/// Hits@K: mean top-K indicator over `queries`. Parallel over queries; the
/// mean is reduced in query order.
pub fn hits_at_k<P: LinkPredictor + ?Sized>(
    predictor: &P,
    graph: &KnowledgeGraph,
    queries: &[Query],
    opts: EvalOptions,
) -> Result<EvalResult> {
    if queries.is_empty() {
        return Err(Error::Parameter("empty query set".into()));
    }
    if opts.k < 1 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    let ranks: Vec<GoldRank> = queries
        .par_iter()
        .map(|q| predictor.gold_rank(graph, q, opts.filtered))
        .collect::<Result<_>>()?;
    let top_k: Vec<bool> = ranks.iter().map(|r| r.in_top_k(opts.k, opts.ties)).collect();
    let hits = top_k.iter().filter(|&&f| f).count() as f64 / queries.len() as f64;
    let tied_queries = ranks.iter().filter(|r| r.is_tied()).count();
    if tied_queries > 0 {
        log::debug!("{tied_queries} of {} gold answers tied", queries.len());
    }
    Ok(EvalResult {
        k: opts.k,
        ranks: ranks.iter().map(|r| r.optimistic).collect(),
        top_k,
        hits_at_k: hits,
        tied_queries,
    })
}

/// Writes `query_id,direction,gold,rank,topK_flag` rows.
pub fn write_rank_dump<W: Write>(out: W, queries: &[Query], result: &EvalResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query_id", "direction", "gold", "rank", "topK_flag"])?;
    for (i, q) in queries.iter().enumerate() {
        w.write_record([
            i.to_string(),
            q.direction.as_str().to_owned(),
            q.gold.to_string(),
            result.ranks[i].to_string(),
            (result.top_k[i] as u8).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("rank dump", e))?;
    Ok(())
}
