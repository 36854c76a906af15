//! Rank aggregation with scoring rules.
//!
//! Each ballot is one voter's (model's) ordering of a common candidate set.
//! Majority and Borda award positional points from the score vectors
//! `(1, 0, ..., 0)` and `(m-1, ..., 0)`; range voting awards each candidate
//! its raw score mapped affinely onto `[-1, 1]`. Points are summed per
//! candidate and candidates are re-ranked by total.
//!
//! When a ballot ties several candidates, they share the mean of the points
//! for the positions they jointly occupy, so a tied top under majority splits
//! its single point.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{GoldRank, LinkPredictor};
use crate::graph::{EntityId, KnowledgeGraph, Query};
use crate::models::EmbeddingModel;

/// Two totals closer than this (relative to their magnitude, at least 1)
/// are reported as indifferent.
pub const INDIFFERENCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VotingRule {
    Majority,
    Borda,
    Range,
    /// Sum of raw scores. Not a scoring rule over rankings; kept only as an
    /// experimental baseline.
    #[doc(hidden)]
    MeanScore,
}

impl VotingRule {
    pub const STANDARD: [VotingRule; 3] = [VotingRule::Majority, VotingRule::Borda, VotingRule::Range];

    pub fn name(self) -> &'static str {
        match self {
            VotingRule::Majority => "majority",
            VotingRule::Borda => "borda",
            VotingRule::Range => "range",
            VotingRule::MeanScore => "meanscore",
        }
    }

    fn needs_scores(self) -> bool {
        matches!(self, VotingRule::Range | VotingRule::MeanScore)
    }
}

impl std::str::FromStr for VotingRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "majority" | "major" => Ok(VotingRule::Majority),
            "borda" => Ok(VotingRule::Borda),
            "range" => Ok(VotingRule::Range),
            "meanscore" => Ok(VotingRule::MeanScore),
            _ => Err(format!("unknown voting rule `{s}`")),
        }
    }
}

/// One voter's preference over the profile's candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Ballot {
    /// Per candidate: how many candidates this voter strictly prefers to it.
    levels: Vec<usize>,
    scores: Option<Vec<f64>>,
}

impl Ballot {
    /// Ballot induced by raw predictive scores (higher is better).
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Data("NaN score in ballot".into()));
        }
        let levels = scores
            .iter()
            .map(|s| scores.iter().filter(|&&d| d > *s).count())
            .collect();
        Ok(Ballot {
            levels,
            scores: Some(scores),
        })
    }

    /// Ballot from 1-based positions; equal positions are ties.
    pub fn from_positions(positions: &[usize]) -> Result<Self> {
        if positions.iter().any(|&p| p == 0) {
            return Err(Error::Data("positions are 1-based".into()));
        }
        let levels = positions
            .iter()
            .map(|p| positions.iter().filter(|&&d| d < *p).count())
            .collect();
        Ok(Ballot {
            levels,
            scores: None,
        })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn scores(&self) -> Option<&[f64]> {
        self.scores.as_deref()
    }

    /// Number of candidates strictly preferred to candidate `i`.
    pub fn level(&self, i: usize) -> usize {
        self.levels[i]
    }
}

/// Ballots of several voters over one query's candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub candidates: Vec<EntityId>,
    pub ballots: Vec<Ballot>,
}

impl Profile {
    pub fn new(candidates: Vec<EntityId>, ballots: Vec<Ballot>) -> Result<Self> {
        if ballots.is_empty() {
            return Err(Error::Parameter("profile needs at least one ballot".into()));
        }
        if candidates.is_empty() {
            return Err(Error::Parameter("profile needs at least one candidate".into()));
        }
        if candidates.iter().collect::<HashSet<_>>().len() != candidates.len() {
            return Err(Error::Parameter("duplicate candidates in profile".into()));
        }
        if let Some(b) = ballots.iter().find(|b| b.len() != candidates.len()) {
            return Err(Error::Parameter(format!(
                "ballot covers {} candidates, profile has {}",
                b.len(),
                candidates.len()
            )));
        }
        Ok(Profile { candidates, ballots })
    }

    /// Profile of score ballots, one per row of `scores`.
    pub fn from_scores(candidates: Vec<EntityId>, scores: Vec<Vec<f64>>) -> Result<Self> {
        let ballots = scores
            .into_iter()
            .map(Ballot::from_scores)
            .collect::<Result<_>>()?;
        Self::new(candidates, ballots)
    }
}

/// Maps scores affinely so the minimum becomes -1 and the maximum +1. A
/// constant vector maps to all zeros.
pub fn normalize_range_scores(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Parameter("empty score vector".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("non-finite score in range ballot".into()));
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.0; scores.len()]);
    }
    Ok(scores
        .iter()
        .map(|s| 2.0 * (s - min) / (max - min) - 1.0)
        .collect())
}

fn positional_weight(rule: VotingRule, m: usize, position: usize) -> f64 {
    match rule {
        VotingRule::Majority => (position == 0) as u8 as f64,
        VotingRule::Borda => (m - 1 - position) as f64,
        VotingRule::Range | VotingRule::MeanScore => unreachable!("cardinal rule"),
    }
}

/// Points a single ballot awards to each candidate under `rule`.
pub fn ballot_points(rule: VotingRule, ballot: &Ballot) -> Result<Vec<f64>> {
    match rule {
        VotingRule::Range => {
            let scores = ballot
                .scores()
                .ok_or_else(|| Error::Parameter("range voting needs raw scores".into()))?;
            normalize_range_scores(scores)
        }
        VotingRule::MeanScore => ballot
            .scores()
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::Parameter("score averaging needs raw scores".into())),
        VotingRule::Majority | VotingRule::Borda => {
            let m = ballot.len();
            let mut group_size: HashMap<usize, usize> = HashMap::new();
            for &l in &ballot.levels {
                *group_size.entry(l).or_default() += 1;
            }
            Ok(ballot
                .levels
                .iter()
                .map(|&l| {
                    let g = group_size[&l];
                    (l..l + g).map(|p| positional_weight(rule, m, p)).sum::<f64>() / g as f64
                })
                .collect())
        }
    }
}

/// Consensus ordering produced by a voting rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedRanking {
    pub candidates: Vec<EntityId>,
    /// Total points, aligned with `candidates`.
    pub totals: Vec<f64>,
    /// Descending total, ascending id among equal totals.
    pub order: Vec<EntityId>,
    /// `indifferent_with_next[i]`: `order[i]` and `order[i + 1]` have equal totals.
    pub indifferent_with_next: Vec<bool>,
}

pub fn indifferent(a: f64, b: f64) -> bool {
    (a - b).abs() <= INDIFFERENCE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

impl AggregatedRanking {
    /// 1-based position in `order`.
    pub fn position_of(&self, entity: EntityId) -> Option<usize> {
        self.order.iter().position(|&e| e == entity).map(|p| p + 1)
    }

    pub fn total_of(&self, entity: EntityId) -> Option<f64> {
        self.candidates
            .iter()
            .position(|&e| e == entity)
            .map(|i| self.totals[i])
    }

    /// Candidates indifferent with the top of the order.
    pub fn winners(&self) -> Vec<EntityId> {
        self.tie_groups().into_iter().next().unwrap_or_default()
    }

    /// The order split into runs of mutually indifferent candidates.
    pub fn tie_groups(&self) -> Vec<Vec<EntityId>> {
        let mut groups: Vec<Vec<EntityId>> = Vec::new();
        for (i, &e) in self.order.iter().enumerate() {
            match groups.last_mut() {
                Some(g) if self.indifferent_with_next[i - 1] => g.push(e),
                _ => groups.push(vec![e]),
            }
        }
        groups
    }
}

/// Sums each candidate's points over all ballots and re-ranks.
///
/// Per-candidate sums add the points in ascending order, so the totals do
/// not depend on the order of the ballots.
pub fn aggregate(profile: &Profile, rule: VotingRule) -> Result<AggregatedRanking> {
    if rule.needs_scores() && profile.ballots.iter().any(|b| b.scores().is_none()) {
        return Err(Error::Parameter(format!(
            "{} voting needs raw scores on every ballot",
            rule.name()
        )));
    }
    let n = profile.candidates.len();
    let mut per_candidate: Vec<Vec<f64>> = vec![Vec::with_capacity(profile.ballots.len()); n];
    for ballot in &profile.ballots {
        for (c, p) in ballot_points(rule, ballot)?.into_iter().enumerate() {
            per_candidate[c].push(p);
        }
    }
    let totals: Vec<f64> = per_candidate
        .into_iter()
        .map(|mut pts| {
            pts.sort_by(f64::total_cmp);
            pts.into_iter().sum()
        })
        .collect();

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        totals[b]
            .total_cmp(&totals[a])
            .then(profile.candidates[a].cmp(&profile.candidates[b]))
    });
    let indifferent_with_next = idx
        .windows(2)
        .map(|w| indifferent(totals[w[0]], totals[w[1]]))
        .collect();
    Ok(AggregatedRanking {
        candidates: profile.candidates.clone(),
        order: idx.iter().map(|&i| profile.candidates[i]).collect(),
        totals,
        indifferent_with_next,
    })
}

/// A model that answers queries with the aggregated ranking of its voters.
///
/// It exposes rank positions only; no scalar score is invented for the
/// positional rules.
#[derive(Debug, Clone)]
pub struct AggregatedModel {
    voters: Vec<Arc<EmbeddingModel>>,
    rule: VotingRule,
}

/// Builds an aggregated model; all voters must share one dataset.
pub fn aggregate_models(voters: Vec<Arc<EmbeddingModel>>, rule: VotingRule) -> Result<AggregatedModel> {
    let first = voters
        .first()
        .ok_or_else(|| Error::Parameter("no models to aggregate".into()))?;
    for v in &voters[1..] {
        first.check_compatible(v)?;
    }
    Ok(AggregatedModel { voters, rule })
}

impl AggregatedModel {
    pub fn rule(&self) -> VotingRule {
        self.rule
    }

    pub fn voters(&self) -> &[Arc<EmbeddingModel>] {
        &self.voters
    }

    /// Profile over the query's candidates (unmasked ones when `filtered`).
    pub fn profile(&self, graph: &KnowledgeGraph, query: &Query, filtered: bool) -> Result<Profile> {
        let candidates: Vec<EntityId> = if filtered {
            let mask = graph.filter_mask(query);
            (0..graph.num_entities() as u32)
                .map(EntityId)
                .filter(|e| !mask[e.index()])
                .collect()
        } else {
            (0..graph.num_entities() as u32).map(EntityId).collect()
        };
        let scores = self
            .voters
            .iter()
            .map(|m| {
                let all = m.score_all_candidates(query)?;
                Ok(candidates.iter().map(|e| all[e.index()]).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Profile::from_scores(candidates, scores)
    }

    pub fn ranking(&self, graph: &KnowledgeGraph, query: &Query, filtered: bool) -> Result<AggregatedRanking> {
        aggregate(&self.profile(graph, query, filtered)?, self.rule)
    }

    /// Aggregated rankings for a batch of queries.
    pub fn rankings(
        &self,
        graph: &KnowledgeGraph,
        queries: &[Query],
        filtered: bool,
    ) -> Result<Vec<AggregatedRanking>> {
        queries.iter().map(|q| self.ranking(graph, q, filtered)).collect()
    }
}

impl LinkPredictor for AggregatedModel {
    fn gold_rank(&self, graph: &KnowledgeGraph, query: &Query, filtered: bool) -> Result<GoldRank> {
        let ranking = self.ranking(graph, query, filtered)?;
        let pos = ranking
            .position_of(query.gold)
            .ok_or_else(|| Error::QueryContract("gold answer missing from profile".into()))?;
        Ok(GoldRank::exact(pos))
    }
}

/// One row of the profile interchange CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileRow {
    pub query_id: String,
    pub voter_id: String,
    pub entity_id: u32,
    pub raw_score: Option<f64>,
    pub position: usize,
}

/// Reads `query_id,voter_id,entity_id,raw_score,position` rows into one
/// profile per query, in first-appearance order. Ballots use raw scores when
/// every row of the ballot carries one, positions otherwise.
pub fn read_profiles<R: Read>(input: R) -> Result<Vec<(String, Profile)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut queries: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, BTreeMap<String, Vec<ProfileRow>>> = HashMap::new();
    for row in reader.deserialize() {
        let row: ProfileRow = row?;
        if !grouped.contains_key(&row.query_id) {
            queries.push(row.query_id.clone());
        }
        grouped
            .entry(row.query_id.clone())
            .or_default()
            .entry(row.voter_id.clone())
            .or_default()
            .push(row);
    }
    queries
        .into_iter()
        .map(|qid| {
            let voters = &grouped[&qid];
            let mut candidates: Option<Vec<EntityId>> = None;
            let mut ballots = Vec::with_capacity(voters.len());
            for (voter, rows) in voters {
                let mut rows = rows.clone();
                rows.sort_by_key(|r| r.entity_id);
                let cands: Vec<EntityId> = rows.iter().map(|r| EntityId(r.entity_id)).collect();
                match &candidates {
                    None => candidates = Some(cands),
                    Some(c) if *c != cands => {
                        return Err(Error::Data(format!(
                            "query {qid}: voter {voter} ranks a different candidate set"
                        )))
                    }
                    Some(_) => {}
                }
                let ballot = if rows.iter().all(|r| r.raw_score.is_some()) {
                    Ballot::from_scores(rows.iter().map(|r| r.raw_score.unwrap()).collect())?
                } else {
                    Ballot::from_positions(&rows.iter().map(|r| r.position).collect::<Vec<_>>())?
                };
                ballots.push(ballot);
            }
            Ok((qid, Profile::new(candidates.unwrap_or_default(), ballots)?))
        })
        .collect()
}

/// Writes `query_id,position,entity_id,total,indifferent_with_next` rows.
pub fn write_aggregated<W: Write>(out: W, rankings: &[(String, AggregatedRanking)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query_id", "position", "entity_id", "total", "indifferent_with_next"])?;
    for (qid, r) in rankings {
        for (i, e) in r.order.iter().enumerate() {
            let total = r.total_of(*e).unwrap_or(f64::NAN);
            let tied = r.indifferent_with_next.get(i).copied().unwrap_or(false);
            w.write_record([
                qid.clone(),
                (i + 1).to_string(),
                e.to_string(),
                total.to_string(),
                (tied as u8).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("aggregated rankings", e))?;
    Ok(())
}
