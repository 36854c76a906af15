//! Predictive multiplicity over an ε-level set of retrained models.
//!
//! A competitor is admitted to the level set when its Hits@K on the
//! reference split is at most ε below the baseline's. Each competitor is
//! compared with the baseline query by query: a conflict is a query whose
//! gold answer is inside the top K for one model and outside for the other.
//! Ambiguity is the fraction of queries conflicted by at least one
//! competitor; discrepancy is the largest per-competitor conflict rate.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{hits_at_k, EvalOptions, EvalResult, LinkPredictor};
use crate::graph::{queries_from_split, KnowledgeGraph, Query, Split};
use crate::models::{EmbeddingModel, ModelConfig};
use crate::train::{derive_seed, train, train_many};
use crate::voting::{aggregate_models, VotingRule};

/// A trained model together with the numbers the level set needs.
#[derive(Debug, Clone)]
pub struct Member {
    pub model: Arc<EmbeddingModel>,
    pub seed: u64,
    pub reference_hits: f64,
    pub checkpoint_hash: String,
}

impl Member {
    pub fn new(
        model: EmbeddingModel,
        graph: &KnowledgeGraph,
        reference: &[Query],
        opts: EvalOptions,
    ) -> Result<Self> {
        let reference_hits = hits_at_k(&model, graph, reference, opts)?.hits_at_k;
        Ok(Member {
            seed: model.config.seed,
            checkpoint_hash: model.checkpoint_hash()?,
            model: Arc::new(model),
            reference_hits,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelSetStatus {
    Complete,
    /// `max_attempts` ran out before `target_size` competitors were admitted.
    Partial,
}

#[derive(Debug, Clone)]
pub struct LevelSet {
    pub baseline: Member,
    pub competitors: Vec<Member>,
    pub epsilon: f64,
    pub reference_split: Split,
    pub attempts: usize,
    pub rejected: usize,
    pub status: LevelSetStatus,
}

impl LevelSet {
    /// Admits every pool member within ε of the baseline. Level sets built
    /// from one pool are nested in ε.
    pub fn from_pool(baseline: Member, pool: &[Member], epsilon: f64, reference_split: Split) -> Self {
        let competitors: Vec<Member> = pool
            .iter()
            .filter(|m| admits(baseline.reference_hits, m.reference_hits, epsilon))
            .cloned()
            .collect();
        LevelSet {
            rejected: pool.len() - competitors.len(),
            attempts: pool.len(),
            status: LevelSetStatus::Complete,
            baseline,
            competitors,
            epsilon,
            reference_split,
        }
    }
}

/// Performance gap `D = H(baseline) - H(model)`.
pub fn performance_gap(baseline_hits: f64, hits: f64) -> f64 {
    baseline_hits - hits
}

pub fn admits(baseline_hits: f64, hits: f64, epsilon: f64) -> bool {
    performance_gap(baseline_hits, hits) <= epsilon
}

/// Upper bound on discrepancy given the baseline's Hits@K and ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyBound {
    pub raw: f64,
    /// `raw` clamped to `[0, 1]`.
    pub clamped: f64,
}

/// `2 * (1 - hits) + epsilon`
pub fn discrepancy_bound(baseline_hits: f64, epsilon: f64) -> DiscrepancyBound {
    let raw = 2.0 * (1.0 - baseline_hits) + epsilon;
    DiscrepancyBound {
        raw,
        clamped: raw.clamp(0.0, 1.0),
    }
}

/// Competitor x query conflict indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictMatrix {
    rows: Vec<Vec<bool>>,
    num_queries: usize,
}

impl ConflictMatrix {
    pub fn from_flags(baseline: &[bool], competitors: &[Vec<bool>]) -> Result<Self> {
        if let Some(c) = competitors.iter().find(|c| c.len() != baseline.len()) {
            return Err(Error::Parameter(format!(
                "competitor has {} flags, baseline {}",
                c.len(),
                baseline.len()
            )));
        }
        Ok(ConflictMatrix {
            rows: competitors
                .iter()
                .map(|c| c.iter().zip(baseline).map(|(a, b)| a != b).collect())
                .collect(),
            num_queries: baseline.len(),
        })
    }

    pub fn from_rows(rows: Vec<Vec<bool>>, num_queries: usize) -> Result<Self> {
        if rows.iter().any(|r| r.len() != num_queries) {
            return Err(Error::Parameter("ragged conflict matrix".into()));
        }
        Ok(ConflictMatrix { rows, num_queries })
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
    }

    pub fn num_competitors(&self) -> usize {
        self.rows.len()
    }

    fn check(&self) -> Result<()> {
        if self.num_queries == 0 {
            return Err(Error::Parameter("empty query set".into()));
        }
        if self.rows.is_empty() {
            return Err(Error::Parameter("level set has no competitors".into()));
        }
        Ok(())
    }

    /// Per query: conflicted by at least one competitor.
    pub fn query_flags(&self) -> Vec<bool> {
        (0..self.num_queries)
            .map(|q| self.rows.iter().any(|r| r[q]))
            .collect()
    }

    pub fn query_counts(&self) -> Vec<usize> {
        (0..self.num_queries)
            .map(|q| self.rows.iter().filter(|r| r[q]).count())
            .collect()
    }

    pub fn conflict_rates(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().filter(|&&c| c).count() as f64 / self.num_queries as f64)
            .collect()
    }

    pub fn ambiguity(&self) -> Result<f64> {
        self.check()?;
        let n = self.query_flags().into_iter().filter(|&f| f).count();
        Ok(n as f64 / self.num_queries as f64)
    }

    pub fn discrepancy(&self) -> Result<f64> {
        self.check()?;
        Ok(self.conflict_rates().into_iter().fold(0.0, f64::max))
    }

    /// The same competitors restricted to a subset of query indices.
    pub fn restrict(&self, queries: &[usize]) -> Self {
        ConflictMatrix {
            rows: self
                .rows
                .iter()
                .map(|r| queries.iter().map(|&q| r[q]).collect())
                .collect(),
            num_queries: queries.len(),
        }
    }
}

/// Whether `competitor` and `baseline` disagree on the query's top-K membership.
pub fn conflict(
    graph: &KnowledgeGraph,
    baseline: &EmbeddingModel,
    competitor: &EmbeddingModel,
    query: &Query,
    opts: EvalOptions,
) -> Result<bool> {
    baseline.check_compatible(competitor)?;
    let b = baseline.gold_rank(graph, query, opts.filtered)?;
    let c = competitor.gold_rank(graph, query, opts.filtered)?;
    Ok(b.in_top_k(opts.k, opts.ties) != c.in_top_k(opts.k, opts.ties))
}

fn top_k_flags<P: LinkPredictor + ?Sized>(
    p: &P,
    graph: &KnowledgeGraph,
    queries: &[Query],
    opts: EvalOptions,
) -> Result<EvalResult> {
    hits_at_k(p, graph, queries, opts)
}

/// Ambiguity of a level set of embedding models over `queries`.
pub fn ambiguity(graph: &KnowledgeGraph, level_set: &LevelSet, queries: &[Query], opts: EvalOptions) -> Result<f64> {
    level_conflicts(graph, level_set, queries, opts)?.ambiguity()
}

/// Discrepancy of a level set of embedding models over `queries`.
pub fn discrepancy(graph: &KnowledgeGraph, level_set: &LevelSet, queries: &[Query], opts: EvalOptions) -> Result<f64> {
    level_conflicts(graph, level_set, queries, opts)?.discrepancy()
}

pub fn level_conflicts(
    graph: &KnowledgeGraph,
    level_set: &LevelSet,
    queries: &[Query],
    opts: EvalOptions,
) -> Result<ConflictMatrix> {
    let base = top_k_flags(level_set.baseline.model.as_ref(), graph, queries, opts)?;
    let comps = level_set
        .competitors
        .iter()
        .map(|m| Ok(top_k_flags(m.model.as_ref(), graph, queries, opts)?.top_k))
        .collect::<Result<Vec<_>>>()?;
    ConflictMatrix::from_flags(&base.top_k, &comps)
}

/// Settings shared by level-set construction and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub eval: EvalOptions,
    /// Split on which ε admission is measured.
    pub reference_split: Split,
    /// Split on which multiplicity is reported.
    pub evaluation_split: Split,
    pub master_seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            eval: EvalOptions::default(),
            reference_split: Split::Valid,
            evaluation_split: Split::Test,
            master_seed: 0,
        }
    }
}

pub fn competitor_seed(master: u64, attempt: usize) -> u64 {
    derive_seed(master, &format!("competitor/{attempt}"))
}

pub fn aggregation_seed(master: u64, slot: usize, member: usize) -> u64 {
    derive_seed(master, &format!("aggregate/{slot}/{member}"))
}

fn train_members(
    graph: &KnowledgeGraph,
    configs: &[ModelConfig],
    reference: &[Query],
    opts: EvalOptions,
    first_index: usize,
) -> Result<Vec<Member>> {
    let models = train_many(graph, configs);
    models
        .into_par_iter()
        .enumerate()
        .map(|(i, m)| {
            m.and_then(|m| Member::new(m, graph, reference, opts))
                .map_err(|e| Error::member(first_index + i, e))
        })
        .collect()
}

/// Trains the baseline from `config` as given.
pub fn train_baseline(graph: &KnowledgeGraph, config: &ModelConfig, opts: &AuditOptions) -> Result<Member> {
    let reference = queries_from_split(graph, opts.reference_split);
    let model = train(graph, config)?.model;
    Member::new(model, graph, &reference, opts.eval)
}

/// Trains `size` retrains of `config` with seeds derived from the master
/// seed (`competitor/0`, `competitor/1`, ...).
pub fn train_pool(graph: &KnowledgeGraph, config: &ModelConfig, size: usize, opts: &AuditOptions) -> Result<Vec<Member>> {
    let reference = queries_from_split(graph, opts.reference_split);
    let configs: Vec<_> = (0..size)
        .map(|i| config.with_seed(competitor_seed(opts.master_seed, i)))
        .collect();
    train_members(graph, &configs, &reference, opts.eval, 0)
}

/// Retrains `baseline_config` with fresh seeds, admitting models within ε
/// of the baseline until `target_size` are admitted or `max_attempts` are
/// used up. The latter returns a partial level set.
pub fn build_level_set(
    graph: &KnowledgeGraph,
    baseline_config: &ModelConfig,
    epsilon: f64,
    target_size: usize,
    max_attempts: usize,
    opts: &AuditOptions,
) -> Result<LevelSet> {
    if !(epsilon >= 0.0) {
        return Err(Error::Parameter("epsilon must be non-negative".into()));
    }
    let reference = queries_from_split(graph, opts.reference_split);
    let baseline = train_baseline(graph, baseline_config, opts)?;
    let mut competitors = Vec::new();
    let mut attempts = 0;
    let mut rejected = 0;
    while competitors.len() < target_size && attempts < max_attempts {
        let chunk = (target_size - competitors.len()).min(max_attempts - attempts);
        let configs: Vec<_> = (attempts..attempts + chunk)
            .map(|i| baseline_config.with_seed(competitor_seed(opts.master_seed, i)))
            .collect();
        for member in train_members(graph, &configs, &reference, opts.eval, attempts)? {
            if competitors.len() == target_size {
                break;
            }
            attempts += 1;
            if admits(baseline.reference_hits, member.reference_hits, epsilon) {
                competitors.push(member);
            } else {
                rejected += 1;
            }
        }
    }
    let status = if competitors.len() < target_size {
        log::warn!(
            "level set partial: {} of {target_size} competitors after {attempts} attempts",
            competitors.len()
        );
        LevelSetStatus::Partial
    } else {
        LevelSetStatus::Complete
    };
    Ok(LevelSet {
        baseline,
        competitors,
        epsilon,
        reference_split: opts.reference_split,
        attempts,
        rejected,
        status,
    })
}

/// Voter models per level-set slot (0 = baseline, then competitors). Each
/// ensemble starts with the slot's own model followed by fresh retrains.
#[derive(Debug, Clone)]
pub struct Ensembles {
    pub slots: Vec<Vec<Arc<EmbeddingModel>>>,
    pub hashes: Vec<Vec<String>>,
}

impl Ensembles {
    pub fn size(&self) -> usize {
        self.slots.first().map_or(0, Vec::len)
    }
}

pub fn train_ensembles(
    graph: &KnowledgeGraph,
    level_set: &LevelSet,
    n_aggregate: usize,
    master_seed: u64,
) -> Result<Ensembles> {
    if n_aggregate == 0 {
        return Err(Error::Parameter("n_aggregate must be at least 1".into()));
    }
    let members: Vec<&Member> = std::iter::once(&level_set.baseline)
        .chain(&level_set.competitors)
        .collect();
    let mut configs = Vec::new();
    for (slot, m) in members.iter().enumerate() {
        for j in 1..n_aggregate {
            configs.push((slot, m.model.config.with_seed(aggregation_seed(master_seed, slot, j))));
        }
    }
    let trained: Vec<Result<EmbeddingModel>> = configs
        .par_iter()
        .map(|(slot, c)| train(graph, c).map(|r| r.model).map_err(|e| Error::member(*slot, e)))
        .collect();
    let mut slots: Vec<Vec<Arc<EmbeddingModel>>> =
        members.iter().map(|m| vec![m.model.clone()]).collect();
    let mut hashes: Vec<Vec<String>> = members.iter().map(|m| vec![m.checkpoint_hash.clone()]).collect();
    for ((slot, _), model) in configs.iter().zip(trained) {
        let model = model?;
        hashes[*slot].push(model.checkpoint_hash()?);
        slots[*slot].push(Arc::new(model));
    }
    Ok(Ensembles { slots, hashes })
}

/// Multiplicity metrics for one evaluation set (plain or aggregated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityReport {
    /// `none` or the voting rule.
    pub rule: String,
    pub n_aggregate: usize,
    pub k: usize,
    pub epsilon: f64,
    pub filtered: bool,
    pub reference_split: Split,
    pub evaluation_split: Split,
    /// How conflicts are counted.
    pub comparison: String,
    pub num_queries: usize,
    pub num_competitors: usize,
    pub baseline_hits: f64,
    pub baseline_reference_hits: f64,
    pub competitor_hits: Vec<f64>,
    pub competitor_reference_hits: Vec<f64>,
    /// Mean Hits@K over the competitors.
    pub mean_hits: Option<f64>,
    pub ambiguity: Option<f64>,
    pub discrepancy: Option<f64>,
    pub conflict_rates: Vec<f64>,
    pub bound: f64,
    pub bound_raw: f64,
    /// Largest reference-split gap among competitors.
    pub realized_epsilon: Option<f64>,
    /// `realized_epsilon - epsilon`; positive after aggregation pushed a
    /// competitor out of the tolerance.
    pub epsilon_deviation: Option<f64>,
    /// Largest evaluation-split gap among competitors.
    pub evaluation_gap: Option<f64>,
    /// Bound with ε replaced by the tolerance that holds on the evaluation
    /// split: `2 * (1 - baseline_hits) + max(epsilon, evaluation_gap)`.
    pub bound_on_evaluation_raw: f64,
    pub checkpoint_hashes: Vec<Vec<String>>,
    #[serde(skip)]
    pub conflicts: Option<ConflictMatrix>,
    /// Evaluation-split results, baseline first.
    #[serde(skip)]
    pub evaluations: Vec<EvalResult>,
}

impl MultiplicityReport {
    /// Per-pair disagreement rate never exceeds `(1 - H*) + (1 - H)`.
    pub fn pairwise_bound_holds(&self) -> bool {
        self.conflict_rates
            .iter()
            .zip(&self.competitor_hits)
            .all(|(rate, h)| *rate <= (1.0 - self.baseline_hits) + (1.0 - h) + 1e-12)
    }
}

/// One model's results on the evaluation and reference splits.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberResults {
    pub evaluation: EvalResult,
    pub reference: EvalResult,
}

pub fn evaluate_member<P: LinkPredictor + ?Sized>(
    predictor: &P,
    graph: &KnowledgeGraph,
    opts: &AuditOptions,
) -> Result<MemberResults> {
    let eval_q = queries_from_split(graph, opts.evaluation_split);
    let ref_q = queries_from_split(graph, opts.reference_split);
    Ok(MemberResults {
        evaluation: hits_at_k(predictor, graph, &eval_q, opts.eval)?,
        reference: hits_at_k(predictor, graph, &ref_q, opts.eval)?,
    })
}

/// Assembles a report from per-model results, baseline first.
pub fn build_report(
    baseline: &MemberResults,
    competitors: &[&MemberResults],
    rule: Option<VotingRule>,
    n_aggregate: usize,
    epsilon: f64,
    opts: &AuditOptions,
    checkpoint_hashes: Vec<Vec<String>>,
) -> Result<MultiplicityReport> {
    let base = &baseline.evaluation;
    let comp_flags: Vec<Vec<bool>> = competitors.iter().map(|c| c.evaluation.top_k.clone()).collect();
    let matrix = ConflictMatrix::from_flags(&base.top_k, &comp_flags)?;
    let competitor_hits: Vec<f64> = competitors.iter().map(|c| c.evaluation.hits_at_k).collect();
    let ref_hits: Vec<f64> = competitors.iter().map(|c| c.reference.hits_at_k).collect();
    let nonempty = !competitors.is_empty();
    let max_gap = |b: f64, hs: &[f64]| {
        hs.iter()
            .map(|h| performance_gap(b, *h))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let realized = nonempty.then(|| max_gap(baseline.reference.hits_at_k, &ref_hits));
    let eval_gap = nonempty.then(|| max_gap(base.hits_at_k, &competitor_hits));
    let bound = discrepancy_bound(base.hits_at_k, epsilon);
    let applicable_eps = epsilon.max(eval_gap.unwrap_or(epsilon));

    let mut evaluations = vec![base.clone()];
    evaluations.extend(competitors.iter().map(|c| c.evaluation.clone()));
    Ok(MultiplicityReport {
        rule: rule.map_or("none", VotingRule::name).to_owned(),
        n_aggregate,
        k: opts.eval.k,
        epsilon,
        filtered: opts.eval.filtered,
        reference_split: opts.reference_split,
        evaluation_split: opts.evaluation_split,
        comparison: "each competitor against the baseline".to_owned(),
        num_queries: base.top_k.len(),
        num_competitors: competitors.len(),
        baseline_hits: base.hits_at_k,
        baseline_reference_hits: baseline.reference.hits_at_k,
        mean_hits: nonempty
            .then(|| competitor_hits.iter().sum::<f64>() / competitor_hits.len() as f64),
        ambiguity: nonempty.then(|| matrix.ambiguity()).transpose()?,
        discrepancy: nonempty.then(|| matrix.discrepancy()).transpose()?,
        conflict_rates: matrix.conflict_rates(),
        competitor_hits,
        competitor_reference_hits: ref_hits,
        bound: bound.clamped,
        bound_raw: bound.raw,
        realized_epsilon: realized,
        epsilon_deviation: realized.map(|r| r - epsilon),
        evaluation_gap: eval_gap,
        bound_on_evaluation_raw: discrepancy_bound(base.hits_at_k, applicable_eps).raw,
        checkpoint_hashes,
        conflicts: Some(matrix),
        evaluations,
    })
}

/// Evaluates a baseline against competitors on the evaluation and
/// reference splits and assembles the report.
#[allow(clippy::too_many_arguments)]
pub fn assess(
    graph: &KnowledgeGraph,
    baseline: &dyn LinkPredictor,
    competitors: &[&dyn LinkPredictor],
    rule: Option<VotingRule>,
    n_aggregate: usize,
    epsilon: f64,
    opts: &AuditOptions,
    checkpoint_hashes: Vec<Vec<String>>,
) -> Result<MultiplicityReport> {
    let base = evaluate_member(baseline, graph, opts)?;
    let comps = competitors
        .iter()
        .enumerate()
        .map(|(i, c)| evaluate_member(*c, graph, opts).map_err(|e| Error::member(i + 1, e)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&MemberResults> = comps.iter().collect();
    build_report(&base, &refs, rule, n_aggregate, epsilon, opts, checkpoint_hashes)
}

/// Metrics over the level set itself, without aggregation.
pub fn evaluate_level_set(graph: &KnowledgeGraph, level_set: &LevelSet, opts: &AuditOptions) -> Result<MultiplicityReport> {
    let comps: Vec<&dyn LinkPredictor> = level_set
        .competitors
        .iter()
        .map(|m| m.model.as_ref() as &dyn LinkPredictor)
        .collect();
    let hashes = std::iter::once(&level_set.baseline)
        .chain(&level_set.competitors)
        .map(|m| vec![m.checkpoint_hash.clone()])
        .collect();
    assess(
        graph,
        level_set.baseline.model.as_ref(),
        &comps,
        None,
        1,
        level_set.epsilon,
        opts,
        hashes,
    )
}

/// Metrics over aggregated models built from the first `n` voters of each
/// ensemble. The aggregated baseline (slot 0) is the comparison point.
pub fn evaluate_ensembles(
    graph: &KnowledgeGraph,
    level_set: &LevelSet,
    ensembles: &Ensembles,
    rule: VotingRule,
    n: usize,
    opts: &AuditOptions,
) -> Result<MultiplicityReport> {
    if n == 0 || n > ensembles.size() {
        return Err(Error::Parameter(format!(
            "n_aggregate {n} outside 1..={}",
            ensembles.size()
        )));
    }
    let models = ensembles
        .slots
        .iter()
        .enumerate()
        .map(|(slot, voters)| {
            aggregate_models(voters[..n].to_vec(), rule).map_err(|e| Error::member(slot, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let comps: Vec<&dyn LinkPredictor> = models[1..].iter().map(|m| m as &dyn LinkPredictor).collect();
    let hashes = ensembles.hashes.iter().map(|h| h[..n].to_vec()).collect();
    assess(graph, &models[0], &comps, Some(rule), n, level_set.epsilon, opts, hashes)
}

/// Evaluation of a level set with optional aggregation: without a rule the
/// level set is measured directly; with a rule every slot is replaced by the
/// aggregate of `n_aggregate` models trained from its config.
pub fn evaluate_with_aggregation(
    graph: &KnowledgeGraph,
    level_set: &LevelSet,
    rule: Option<VotingRule>,
    n_aggregate: usize,
    opts: &AuditOptions,
) -> Result<MultiplicityReport> {
    match rule {
        None => evaluate_level_set(graph, level_set, opts),
        Some(rule) => {
            let ensembles = train_ensembles(graph, level_set, n_aggregate, opts.master_seed)?;
            evaluate_ensembles(graph, level_set, &ensembles, rule, n_aggregate, opts)
        }
    }
}
