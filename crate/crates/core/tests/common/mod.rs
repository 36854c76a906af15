//! Helpers shared by the integration tests and the acceptance harness:
//! brute-force oracles, voting axiom checks, finite-difference gradient
//! checks and the Example 1 voting profile.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use multikge::answers::answer_set;
use multikge::eval::QueryRanking;
use multikge::stats::spearman;
use multikge::train::{example_objective, initialise, SparseGrad};
use multikge::voting::Ballot;
use multikge::{
    aggregate, hits_at_k, queries_from_split, top_k, Direction, EntityId, EvalOptions, KnowledgeGraph, LossKind,
    Method, ModelConfig, Profile, Query, RelationId, Split, TieMode, Triple, VotingRule,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const METHODS: [Method; 5] = [
    Method::TransE,
    Method::RotatE,
    Method::DistMult,
    Method::ComplEx,
    Method::Rescal,
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn config_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// A random graph with distinct triples split roughly 60/20/20.
pub fn random_graph(rng: &mut ChaCha8Rng, max_entities: u32, max_relations: u32) -> KnowledgeGraph {
    let ne = rng.random_range(3..=max_entities);
    let nr = rng.random_range(1..=max_relations);
    let mut all: Vec<Triple> = Vec::new();
    for h in 0..ne {
        for r in 0..nr {
            for t in 0..ne {
                all.push(Triple::new(h, r, t));
            }
        }
    }
    all.shuffle(rng);
    let n = rng.random_range(5..=all.len().min(60));
    all.truncate(n);
    let n_test = (n / 5).max(1);
    let n_valid = (n / 5).max(1);
    let test = all.split_off(n - n_test);
    let valid = all.split_off(all.len() - n_valid);
    KnowledgeGraph::from_ids(ne, nr, &all, &valid, &test).unwrap()
}

pub fn random_config(rng: &mut ChaCha8Rng, method: Method) -> ModelConfig {
    let mut c = ModelConfig::new(method, rng.random_range(1..=4));
    c.seed = rng.random();
    c.init_scale = 1.0;
    c
}

/// Optimistic filtered (or raw) rank computed candidate by candidate.
pub fn oracle_rank(scores: &[f64], gold: usize, masked: &[bool]) -> usize {
    let mut rank = 1;
    for (d, s) in scores.iter().enumerate() {
        if d != gold && !masked[d] && *s > scores[gold] {
            rank += 1;
        }
    }
    rank
}

/// Filter mask from the graph's known triples, gold excluded.
pub fn oracle_mask(graph: &KnowledgeGraph, query: &Query) -> Vec<bool> {
    (0..graph.num_entities() as u32)
        .map(|c| {
            let c = EntityId(c);
            c != query.gold && graph.is_known(&query.triple_for(c))
        })
        .collect()
}

pub fn oracle_scores(model: &multikge::EmbeddingModel, query: &Query, n: usize) -> Vec<f64> {
    (0..n as u32)
        .map(|c| model.score(&query.triple_for(EntityId(c))).unwrap())
        .collect()
}

pub fn oracle_answer_set(scores: &[f64], masked: &[bool], tau: f64) -> BTreeSet<EntityId> {
    let mut out = BTreeSet::new();
    for i in 0..scores.len() {
        if !masked[i] && !(scores[i] < tau) {
            out.insert(EntityId(i as u32));
        }
    }
    out
}

/// Borda points per candidate: candidates strictly below plus half of the
/// other candidates tied with it.
pub fn oracle_borda(ballots: &[Vec<f64>]) -> Vec<f64> {
    let m = ballots[0].len();
    let mut totals = vec![0.0; m];
    for b in ballots {
        for c in 0..m {
            let below = b.iter().filter(|&&x| x < b[c]).count() as f64;
            let tied = b.iter().filter(|&&x| x == b[c]).count() as f64 - 1.0;
            totals[c] += below + tied / 2.0;
        }
    }
    totals
}

/// Spearman ρ from counting ranks and the raw-moment covariance formula.
pub fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let sx: f64 = rx.iter().sum();
    let sy: f64 = ry.iter().sum();
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum();
    let sxx: f64 = rx.iter().map(|a| a * a).sum();
    let syy: f64 = ry.iter().map(|a| a * a).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Score ballots on a small integer grid, so ties are common.
pub fn random_score_profile(rng: &mut ChaCha8Rng, max_candidates: usize, max_voters: usize) -> Vec<Vec<f64>> {
    let m = rng.random_range(2..=max_candidates);
    let v = rng.random_range(1..=max_voters);
    (0..v)
        .map(|_| (0..m).map(|_| rng.random_range(0..6) as f64).collect())
        .collect()
}

pub fn profile(candidates: &[u32], scores: &[Vec<f64>]) -> Profile {
    Profile::from_scores(candidates.iter().map(|&c| EntityId(c)).collect(), scores.to_vec()).unwrap()
}

/// Winners as a set of candidate ids.
fn winners(p: &Profile, rule: VotingRule) -> BTreeSet<EntityId> {
    multikge::aggregate(p, rule).unwrap().winners().into_iter().collect()
}

/// Checks anonymity, neutrality, reinforcement and (where it applies)
/// Pareto for one random profile. Returns a description of every
/// counterexample found.
pub fn check_axioms(rng: &mut ChaCha8Rng, rule: VotingRule, max_candidates: usize, max_voters: usize) -> Vec<String> {
    let mut failures = Vec::new();
    let scores = random_score_profile(rng, max_candidates, max_voters);
    let m = scores[0].len();
    let ids: Vec<u32> = (0..m as u32).collect();
    let base = multikge::aggregate(&profile(&ids, &scores), rule).unwrap();

    // Anonymity: reordering voters changes nothing.
    let mut shuffled = scores.clone();
    shuffled.shuffle(rng);
    let anon = multikge::aggregate(&profile(&ids, &shuffled), rule).unwrap();
    if anon != base {
        failures.push(format!("{}: anonymity fails on {scores:?}", rule.name()));
    }

    // Neutrality: renaming candidates renames the outcome.
    let mut renamed: Vec<u32> = (0..m as u32).map(|i| 10 + i).collect();
    renamed.shuffle(rng);
    let neut = multikge::aggregate(&profile(&renamed, &scores), rule).unwrap();
    let groups_base: Vec<BTreeSet<u32>> = base
        .tie_groups()
        .into_iter()
        .map(|g| g.into_iter().map(|e| renamed[e.index()]).collect())
        .collect();
    let groups_neut: Vec<BTreeSet<u32>> = neut
        .tie_groups()
        .into_iter()
        .map(|g| g.into_iter().map(|e| e.0).collect())
        .collect();
    if base.totals != neut.totals || groups_base != groups_neut {
        failures.push(format!("{}: neutrality fails on {scores:?}", rule.name()));
    }

    // Reinforcement: two electorates sharing a winner elect exactly the
    // shared winners when merged.
    let other = {
        let v = rng.random_range(1..=max_voters);
        (0..v)
            .map(|_| (0..m).map(|_| rng.random_range(0..6) as f64).collect::<Vec<f64>>())
            .collect::<Vec<_>>()
    };
    let w1 = winners(&profile(&ids, &scores), rule);
    let w2 = winners(&profile(&ids, &other), rule);
    let common: BTreeSet<EntityId> = w1.intersection(&w2).copied().collect();
    if !common.is_empty() {
        let merged: Vec<Vec<f64>> = scores.iter().chain(&other).cloned().collect();
        let w = winners(&profile(&ids, &merged), rule);
        if w != common {
            failures.push(format!(
                "{}: reinforcement fails on {scores:?} + {other:?}: {w:?} vs {common:?}",
                rule.name()
            ));
        }
    }

    // Pareto: a candidate every voter strictly prefers is never ranked below
    // (Majority) or is ranked strictly above (Borda, Range).
    for a in 0..m {
        for b in 0..m {
            if a == b || !scores.iter().all(|s| s[a] > s[b]) {
                continue;
            }
            let (ta, tb) = (base.totals[a], base.totals[b]);
            let ok = match rule {
                VotingRule::Majority => ta >= tb,
                _ => ta > tb && !multikge::voting::indifferent(ta, tb),
            };
            if !ok {
                failures.push(format!("{}: Pareto fails for {a} over {b} on {scores:?}", rule.name()));
            }
        }
    }
    failures
}

/// Ballots from 1-based positions must give the same positional totals as
/// score ballots inducing those positions.
pub fn positions_from_scores(scores: &[f64]) -> Vec<usize> {
    scores
        .iter()
        .map(|s| 1 + scores.iter().filter(|&&d| d > *s).count())
        .collect()
}

pub fn position_ballot(scores: &[f64]) -> Ballot {
    Ballot::from_positions(&positions_from_scores(scores)).unwrap()
}

/// Largest relative error between the analytic gradient of the example
/// objective and central finite differences over every parameter the
/// example touches.
pub fn gradient_check(method: Method, loss: LossKind, seed: u64) -> f64 {
    let mut r = rng(seed);
    let ne = 6u32;
    let train: Vec<Triple> = (0..ne).map(|i| Triple::new(i, i % 2, (i + 1) % ne)).collect();
    let graph = KnowledgeGraph::from_ids(ne, 2, &train, &[], &[]).unwrap();
    let mut config = ModelConfig::new(method, 3);
    config.loss = loss;
    config.l2_weight = 0.05;
    config.init_scale = 1.0;
    config.seed = seed;
    let mut model = initialise(&graph, &config);

    let positive = train[r.random_range(0..train.len())];
    let negatives: Vec<Triple> = (0..3)
        .map(|_| {
            let mut n = positive;
            loop {
                let e = EntityId(r.random_range(0..ne));
                if r.random_bool(0.5) {
                    n.head = e;
                } else {
                    n.tail = e;
                }
                if n != positive {
                    return n;
                }
            }
        })
        .collect();

    let mut grad = SparseGrad::new(&model);
    example_objective(&model, &positive, &negatives, Some(&mut grad));

    let ew = config.entity_width();
    let rw = config.relation_width();
    let step = 1e-4;
    let mut entities: HashSet<EntityId> = HashSet::new();
    let mut relations = HashSet::new();
    for t in std::iter::once(&positive).chain(&negatives) {
        entities.insert(t.head);
        entities.insert(t.tail);
        relations.insert(t.relation);
    }
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for &e in &entities {
        for j in 0..ew {
            let idx = e.index() * ew + j;
            let orig = model.entity_table[idx];
            model.entity_table[idx] = orig + step;
            let up = example_objective(&model, &positive, &negatives, None);
            model.entity_table[idx] = orig - step;
            let down = example_objective(&model, &positive, &negatives, None);
            model.entity_table[idx] = orig;
            numeric.push((up - down) / (2.0 * step));
            analytic.push(grad.entity(e)[j]);
        }
    }
    for &rel in &relations {
        for j in 0..rw {
            let idx = rel.index() * rw + j;
            let orig = model.relation_table[idx];
            model.relation_table[idx] = orig + step;
            let up = example_objective(&model, &positive, &negatives, None);
            model.relation_table[idx] = orig - step;
            let down = example_objective(&model, &positive, &negatives, None);
            model.relation_table[idx] = orig;
            numeric.push((up - down) / (2.0 * step));
            analytic.push(grad.relation(rel)[j]);
        }
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Candidates A, B, C, D of the worked voting example, ids 0..4.
pub const EXAMPLE_CANDIDATES: [&str; 4] = ["A", "B", "C", "D"];

/// Three models' scores for A, B, C, D.
pub fn example_scores() -> Vec<Vec<f64>> {
    vec![
        vec![1.0, 8.0, 100.0, 6.0],
        vec![5.0, 8.0, 6.0, 7.0],
        vec![2.0, 40.0, 10.0, 1.0],
    ]
}

/// Published per-ballot points and totals for A, B, C, D.
pub struct PublishedTable {
    pub majority: [[f64; 3]; 4],
    pub majority_totals: [f64; 4],
    pub borda: [[f64; 3]; 4],
    pub borda_totals: [f64; 4],
    pub range: [[f64; 3]; 4],
    pub range_totals: [f64; 4],
}

pub fn published_example() -> PublishedTable {
    PublishedTable {
        majority: [[0.0, 0.0, 0.0], [0.0, 1.0, 1.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        majority_totals: [0.0, 2.0, 1.0, 0.0],
        borda: [[0.0, 0.0, 1.0], [2.0, 3.0, 3.0], [3.0, 1.0, 2.0], [1.0, 2.0, 0.0]],
        borda_totals: [1.0, 8.0, 6.0, 3.0],
        range: [
            [-1.0, -1.0, -0.95],
            [-0.85, 1.0, 1.0],
            [1.0, 0.33, -0.54],
            [-0.90, -0.33, -1.0],
        ],
        range_totals: [-2.95, 1.15, 0.79, -2.23],
    }
}

/// rank_of, top_k and hits_at_k of random models on random graphs, both
/// filtered and raw, against candidate-by-candidate recomputation.
pub fn check_rank_instances(first_seed: u64, n: u64) -> Vec<String> {
    let mut failures = Vec::new();
    for seed in first_seed..first_seed + n {
        let mut r = rng(seed);
        let graph = random_graph(&mut r, 8, 3);
        let method = METHODS[r.random_range(0..METHODS.len())];
        let model = initialise(&graph, &random_config(&mut r, method));
        let queries = queries_from_split(&graph, Split::Test);
        let k = r.random_range(1..=graph.num_entities());
        for filtered in [true, false] {
            let mut oracle_ranks = Vec::new();
            for q in &queries {
                let scores = oracle_scores(&model, q, graph.num_entities());
                let masked = if filtered {
                    oracle_mask(&graph, q)
                } else {
                    vec![false; scores.len()]
                };
                let rank = oracle_rank(&scores, q.gold.index(), &masked);
                let ranking = QueryRanking::from_model(&model, &graph, q, filtered).unwrap();
                if ranking.rank_of(q.gold).unwrap() != rank || top_k(&ranking, q.gold, k).unwrap() != (rank <= k) {
                    failures.push(format!("seed {seed}: rank of {q:?}"));
                }
                oracle_ranks.push(rank);
            }
            let hits = oracle_ranks.iter().filter(|&&x| x <= k).count();
            let opts = EvalOptions {
                k,
                filtered,
                ties: TieMode::Optimistic,
            };
            let res = hits_at_k(&model, &graph, &queries, opts).unwrap();
            if res.ranks != oracle_ranks
                || res.hits_count() != hits
                || (res.hits_at_k - hits as f64 / queries.len() as f64).abs() > 1e-10
            {
                failures.push(format!("seed {seed}: hits_at_k (filtered {filtered})"));
            }
        }
    }
    failures
}

/// Ranks over integer-grid scores with random masks, where ties are common.
pub fn check_tied_rank_instances(first_seed: u64, n: u64) -> Vec<String> {
    let mut failures = Vec::new();
    for seed in first_seed..first_seed + n {
        let mut r = rng(seed);
        let m = r.random_range(2..10);
        let scores: Vec<f64> = (0..m).map(|_| r.random_range(0..4) as f64).collect();
        let gold = r.random_range(0..m);
        let masked: Vec<bool> = (0..m).map(|i| i != gold && r.random_bool(0.3)).collect();
        let query = Query {
            direction: Direction::Tail,
            entity: EntityId(0),
            relation: RelationId(0),
            gold: EntityId(gold as u32),
        };
        let ranking = QueryRanking::new(query, scores.clone(), masked.clone()).unwrap();
        let rank = oracle_rank(&scores, gold, &masked);
        let pessimistic = (0..m).filter(|&d| !masked[d] && scores[d] >= scores[gold]).count();
        let tops_agree = (1..=m).all(|k| top_k(&ranking, query.gold, k).unwrap() == (rank <= k));
        if ranking.rank_of(query.gold).unwrap() != rank
            || ranking.pessimistic_rank_of(query.gold).unwrap() != pessimistic
            || !tops_agree
        {
            failures.push(format!("seed {seed}: {scores:?} gold {gold} mask {masked:?}"));
        }
    }
    failures
}

/// Borda totals from score ballots and from position ballots.
pub fn check_borda_instances(first_seed: u64, n: u64) -> Vec<String> {
    let mut failures = Vec::new();
    for seed in first_seed..first_seed + n {
        let mut r = rng(seed);
        let scores = random_score_profile(&mut r, 6, 7);
        let m = scores[0].len();
        let ids: Vec<u32> = (0..m as u32).collect();
        let expected = oracle_borda(&scores);
        let from_scores = aggregate(&profile(&ids, &scores), VotingRule::Borda).unwrap();
        let ballots = scores.iter().map(|s| position_ballot(s)).collect();
        let p = Profile::new(ids.iter().map(|&c| EntityId(c)).collect(), ballots).unwrap();
        let from_positions = aggregate(&p, VotingRule::Borda).unwrap();
        if from_scores.totals != expected || from_positions.totals != expected {
            failures.push(format!("seed {seed}: {scores:?}"));
        }
    }
    failures
}

/// Spearman ρ on random data with ties; constant inputs must be rejected.
pub fn check_spearman_instances(first_seed: u64, n: u64) -> Vec<String> {
    let mut failures = Vec::new();
    let mut seed = first_seed;
    let mut checked = 0;
    while checked < n {
        let mut r = rng(seed);
        seed += 1;
        let len = r.random_range(3..=12);
        let x: Vec<f64> = (0..len).map(|_| r.random_range(0..5) as f64).collect();
        let y: Vec<f64> = (0..len).map(|_| r.random_range(0..5) as f64 + r.random::<f64>().round()).collect();
        let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
        if constant(&x) || constant(&y) {
            if spearman(&x, &y).is_ok() {
                failures.push(format!("constant input accepted: {x:?} {y:?}"));
            }
            continue;
        }
        let got = spearman(&x, &y).unwrap();
        if (got.rho - oracle_spearman(&x, &y)).abs() > 1e-10 {
            failures.push(format!("{x:?} {y:?}: {} vs {}", got.rho, oracle_spearman(&x, &y)));
        }
        checked += 1;
    }
    failures
}

/// Answer sets with a threshold drawn from the candidate scores, so the
/// inclusive boundary is exercised.
pub fn check_answer_set_instances(first_seed: u64, n: u64) -> Vec<String> {
    let mut failures = Vec::new();
    for seed in first_seed..first_seed + n {
        let mut r = rng(seed);
        let graph = random_graph(&mut r, 8, 3);
        let method = METHODS[r.random_range(0..METHODS.len())];
        let model = initialise(&graph, &random_config(&mut r, method));
        for q in queries_from_split(&graph, Split::Test) {
            let scores = oracle_scores(&model, &q, graph.num_entities());
            let tau = scores[r.random_range(0..scores.len())];
            for filtered in [true, false] {
                let masked = if filtered {
                    oracle_mask(&graph, &q)
                } else {
                    vec![false; scores.len()]
                };
                let got = answer_set(&model, &graph, &q, tau, filtered).unwrap();
                if got.members != oracle_answer_set(&scores, &masked, tau) {
                    failures.push(format!("seed {seed}: answer set of {q:?}"));
                }
            }
        }
    }
    failures
}
