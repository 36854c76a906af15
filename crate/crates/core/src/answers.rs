//! Threshold answer sets and set-level multiplicity.
//!
//! The answer set of a query holds every unmasked candidate scoring at or
//! above τ (the boundary is inclusive).

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, Query};
use crate::models::EmbeddingModel;
use crate::multiplicity::ConflictMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub query: Query,
    pub tau: f64,
    pub members: BTreeSet<EntityId>,
}

impl AnswerSet {
    pub fn jaccard(&self, other: &AnswerSet) -> f64 {
        jaccard(&self.members, &other.members)
    }
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets counted as identical (1).
pub fn jaccard(a: &BTreeSet<EntityId>, b: &BTreeSet<EntityId>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn answer_set(
    model: &EmbeddingModel,
    graph: &KnowledgeGraph,
    query: &Query,
    tau: f64,
    filtered: bool,
) -> Result<AnswerSet> {
    let scores = model.score_all_candidates(query)?;
    let masked = if filtered {
        graph.filter_mask(query)
    } else {
        vec![false; scores.len()]
    };
    let members = scores
        .iter()
        .zip(&masked)
        .enumerate()
        .filter(|&(_, (&s, &m))| !m && s >= tau)
        .map(|(i, _)| EntityId(i as u32))
        .collect();
    Ok(AnswerSet {
        query: *query,
        tau,
        members,
    })
}

/// Answer sets of each model (rows) for each query (columns).
pub fn answer_sets(
    models: &[&EmbeddingModel],
    graph: &KnowledgeGraph,
    queries: &[Query],
    tau: f64,
    filtered: bool,
) -> Result<Vec<Vec<AnswerSet>>> {
    models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            queries
                .par_iter()
                .map(|q| answer_set(m, graph, q, tau, filtered))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::member(i, e))
        })
        .collect()
}

/// Set-level comparison of a baseline against its competitors.
#[derive(Debug, Clone, PartialEq)]
pub struct SetComparison {
    pub conflicts: ConflictMatrix,
    /// Jaccard similarity per competitor and query.
    pub similarity: Vec<Vec<f64>>,
}

impl SetComparison {
    pub fn new(baseline: &[AnswerSet], competitors: &[Vec<AnswerSet>]) -> Result<Self> {
        if let Some(c) = competitors.iter().find(|c| c.len() != baseline.len()) {
            return Err(Error::Parameter(format!(
                "competitor has {} answer sets, baseline {}",
                c.len(),
                baseline.len()
            )));
        }
        let rows = competitors
            .iter()
            .map(|c| c.iter().zip(baseline).map(|(a, b)| a.members != b.members).collect())
            .collect();
        let similarity = competitors
            .iter()
            .map(|c| c.iter().zip(baseline).map(|(a, b)| a.jaccard(b)).collect())
            .collect();
        Ok(SetComparison {
            conflicts: ConflictMatrix::from_rows(rows, baseline.len())?,
            similarity,
        })
    }

    pub fn ambiguity(&self) -> Result<f64> {
        self.conflicts.ambiguity()
    }

    pub fn discrepancy(&self) -> Result<f64> {
        self.conflicts.discrepancy()
    }

    /// Mean Jaccard similarity over (competitor, query) pairs.
    pub fn agreement(&self) -> Result<f64> {
        let n: usize = self.similarity.iter().map(Vec::len).sum();
        if n == 0 {
            return Err(Error::Parameter("no (competitor, query) pairs".into()));
        }
        let mut all: Vec<f64> = self.similarity.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        Ok(all.iter().sum::<f64>() / n as f64)
    }
}

/// Compares answer sets of `baseline` and `competitors` at threshold τ.
pub fn compare_answer_sets(
    baseline: &EmbeddingModel,
    competitors: &[&EmbeddingModel],
    graph: &KnowledgeGraph,
    queries: &[Query],
    tau: f64,
    filtered: bool,
) -> Result<SetComparison> {
    for c in competitors {
        baseline.check_compatible(c)?;
    }
    let base = answer_sets(&[baseline], graph, queries, tau, filtered)?.remove(0);
    let comps = answer_sets(competitors, graph, queries, tau, filtered)?;
    SetComparison::new(&base, &comps)
}

/// A threshold at quantile `q` of the gold-answer scores over `queries`
/// (linear interpolation between order statistics).
pub fn tau_quantile(model: &EmbeddingModel, queries: &[Query], q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Parameter(format!("quantile {q} outside [0, 1]")));
    }
    if queries.is_empty() {
        return Err(Error::Parameter("empty query set".into()));
    }
    let mut scores = queries
        .iter()
        .map(|query| model.score(&query.gold_triple()))
        .collect::<Result<Vec<_>>>()?;
    scores.sort_by(f64::total_cmp);
    let pos = q * (scores.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(scores[lo] + (scores[hi] - scores[lo]) * (pos - lo as f64))
}

#[derive(Serialize)]
struct DumpLine {
    query_id: usize,
    model_id: usize,
    tau: f64,
    members: Vec<u32>,
}

/// JSON lines `{query_id, model_id, tau, members}`; `sets[model][query]`.
pub fn write_answer_sets<W: Write>(mut out: W, sets: &[Vec<AnswerSet>]) -> Result<()> {
    for (model_id, row) in sets.iter().enumerate() {
        for (query_id, set) in row.iter().enumerate() {
            let line = DumpLine {
                query_id,
                model_id,
                tau: set.tau,
                members: set.members.iter().map(|e| e.0).collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io("answer-set dump", e))?;
        }
    }
    Ok(())
}
