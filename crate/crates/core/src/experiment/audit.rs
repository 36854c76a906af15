use serde::Serialize;

use super::summary::{metric_rows, metrics_csv, render_summary};
use super::{csv_bytes, ExperimentSpec, Outputs};
use crate::answers::{answer_sets, tau_quantile, write_answer_sets, SetComparison};
use crate::error::Result;
use crate::graph::{queries_from_split, KnowledgeGraph, Query};
use crate::models::ModelConfig;
use crate::multiplicity::{
    build_level_set, evaluate_ensembles, evaluate_level_set, train_ensembles, LevelSet, LevelSetStatus,
    MultiplicityReport,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberSummary {
    pub seed: u64,
    pub reference_hits: f64,
    pub checkpoint_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSetSummary {
    pub status: LevelSetStatus,
    pub epsilon: f64,
    pub target_size: usize,
    pub attempts: usize,
    pub rejected: usize,
    pub baseline: MemberSummary,
    pub competitors: Vec<MemberSummary>,
}

impl LevelSetSummary {
    pub fn new(ls: &LevelSet, target_size: usize) -> Self {
        let member = |m: &crate::multiplicity::Member| MemberSummary {
            seed: m.seed,
            reference_hits: m.reference_hits,
            checkpoint_hash: m.checkpoint_hash.clone(),
        };
        LevelSetSummary {
            status: ls.status,
            epsilon: ls.epsilon,
            target_size,
            attempts: ls.attempts,
            rejected: ls.rejected,
            baseline: member(&ls.baseline),
            competitors: ls.competitors.iter().map(member).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnswerSetSummary {
    pub tau: f64,
    pub tau_quantile: Option<f64>,
    pub ambiguity: Option<f64>,
    pub discrepancy: Option<f64>,
    pub agreement: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditOutcome {
    pub name: String,
    pub dataset_hash: String,
    pub num_entities: usize,
    pub num_relations: usize,
    pub model: ModelConfig,
    pub level_set: LevelSetSummary,
    pub reports: Vec<MultiplicityReport>,
    pub answer_sets: Option<AnswerSetSummary>,
}

/// Per-query table: the baseline's rank and flag, then one conflict column
/// per competitor.
pub fn write_query_table(queries: &[Query], report: &MultiplicityReport) -> Result<Vec<u8>> {
    let base = &report.evaluations[0];
    let mut header = vec![
        "query_id".to_owned(),
        "direction".to_owned(),
        "entity".to_owned(),
        "relation".to_owned(),
        "gold".to_owned(),
        "baseline_rank".to_owned(),
        "baseline_topk".to_owned(),
        "conflict_count".to_owned(),
    ];
    header.extend((1..=report.num_competitors).map(|i| format!("conflict_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let matrix = report.conflicts.as_ref();
    let counts = matrix.map(|m| m.query_counts());
    let rows = queries.iter().enumerate().map(|(i, q)| {
        let mut row = vec![
            i.to_string(),
            q.direction.as_str().to_owned(),
            q.entity.to_string(),
            q.relation.to_string(),
            q.gold.to_string(),
            base.ranks[i].to_string(),
            (base.top_k[i] as u8).to_string(),
            counts.as_ref().map_or(0, |c| c[i]).to_string(),
        ];
        if let Some(m) = matrix {
            row.extend(m.rows().iter().map(|r| (r[i] as u8).to_string()));
        }
        row
    });
    csv_bytes(&header, rows)
}

fn answer_set_outputs(
    spec: &ExperimentSpec,
    graph: &KnowledgeGraph,
    ls: &LevelSet,
    out: &mut Outputs,
) -> Result<Option<AnswerSetSummary>> {
    let a = &spec.audit;
    let tau = match (a.tau, a.tau_quantile) {
        (Some(t), _) => t,
        (None, Some(q)) => {
            let reference = queries_from_split(graph, a.reference_split);
            tau_quantile(&ls.baseline.model, &reference, q)?
        }
        (None, None) => return Ok(None),
    };
    let queries = queries_from_split(graph, a.evaluation_split);
    let models: Vec<_> = std::iter::once(&ls.baseline)
        .chain(&ls.competitors)
        .map(|m| m.model.as_ref())
        .collect();
    let sets = answer_sets(&models, graph, &queries, tau, a.filtered)?;
    let mut dump = Vec::new();
    write_answer_sets(&mut dump, &sets)?;
    out.put("audit/answer_sets.jsonl", dump);
    let (base, comps) = sets.split_first().expect("baseline answer sets");
    let cmp = SetComparison::new(base, comps)?;
    let some = !comps.is_empty();
    Ok(Some(AnswerSetSummary {
        tau,
        tau_quantile: a.tau_quantile,
        ambiguity: some.then(|| cmp.ambiguity()).transpose()?,
        discrepancy: some.then(|| cmp.discrepancy()).transpose()?,
        agreement: some.then(|| cmp.agreement()).transpose()?,
    }))
}

/// Builds the level set, evaluates it without aggregation and under each
/// configured voting rule, and writes the `audit/` files.
pub fn run_audit(spec: &ExperimentSpec, out: &mut Outputs) -> Result<AuditOutcome> {
    let graph = spec.load_graph()?;
    let opts = spec.audit_options();
    let a = &spec.audit;
    let ls = build_level_set(
        &graph,
        &spec.model,
        a.epsilon,
        a.n_competitors,
        spec.max_attempts(),
        &opts,
    )?;
    out.put("audit/baseline.json", ls.baseline.model.to_checkpoint_bytes()?);

    let mut reports = vec![evaluate_level_set(&graph, &ls, &opts)?];
    let mut hashes = reports[0].checkpoint_hashes.clone();
    if !a.rules.is_empty() {
        let ensembles = train_ensembles(&graph, &ls, a.n_aggregate, spec.master_seed)?;
        for &rule in &a.rules {
            reports.push(evaluate_ensembles(&graph, &ls, &ensembles, rule, a.n_aggregate, &opts)?);
        }
        hashes = ensembles.hashes;
    }

    let queries = queries_from_split(&graph, a.evaluation_split);
    for r in &reports {
        out.put(format!("audit/queries_{}.csv", r.rule), write_query_table(&queries, r)?);
    }
    let rows: Vec<_> = reports.iter().flat_map(metric_rows).collect();
    let metrics = metrics_csv(&rows)?;
    out.put("audit/summary.txt", render_summary(&rows, a.k).into_bytes());
    out.put("audit/metrics.csv", metrics);
    out.put(
        "audit/checkpoints.csv",
        csv_bytes(
            &["slot", "member", "checkpoint_hash"],
            hashes.iter().enumerate().flat_map(|(slot, hs)| {
                hs.iter()
                    .enumerate()
                    .map(move |(j, h)| vec![slot.to_string(), j.to_string(), h.clone()])
            }),
        )?,
    );

    let answer_sets = answer_set_outputs(spec, &graph, &ls, out)?;
    let outcome = AuditOutcome {
        name: spec.name.clone(),
        dataset_hash: graph.dataset_hash().to_owned(),
        num_entities: graph.num_entities(),
        num_relations: graph.num_relations(),
        model: spec.model.clone(),
        level_set: LevelSetSummary::new(&ls, a.n_competitors),
        reports,
        answer_sets,
    };
    out.put_json("audit/report.json", &outcome)?;
    Ok(outcome)
}
