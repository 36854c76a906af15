use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{csv_bytes, fmt_opt, ExperimentSpec, Outputs};
use crate::error::{Error, Result};
use crate::graph::{entity_frequency, relation_frequency};
use crate::multiplicity::ConflictMatrix;
use crate::stats::spearman;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    /// The query's relation.
    Relation,
    /// The query's fixed (non-gold) entity.
    Entity,
}

impl Variable {
    pub fn as_str(self) -> &'static str {
        match self {
            Variable::Relation => "relation",
            Variable::Entity => "entity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One group per relation or entity.
    Target,
    /// Targets with equal training frequency pooled together.
    UniqueFrequency,
    /// Targets pooled by `floor(log2(frequency))`.
    Log2Bucket,
}

impl Grouping {
    pub const ALL: [Grouping; 3] = [Grouping::Target, Grouping::UniqueFrequency, Grouping::Log2Bucket];

    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::Target => "target",
            Grouping::UniqueFrequency => "unique_frequency",
            Grouping::Log2Bucket => "log2_bucket",
        }
    }

    /// Group key and the frequency the group is correlated at.
    fn key(self, target: u32, freq: usize) -> (u64, f64) {
        match self {
            Grouping::Target => (target as u64, freq as f64),
            Grouping::UniqueFrequency => (freq as u64, freq as f64),
            Grouping::Log2Bucket if freq == 0 => (0, 0.0),
            Grouping::Log2Bucket => {
                let b = freq.ilog2() as u64;
                (b + 1, (1u64 << b) as f64)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub variable: Variable,
    pub grouping: Grouping,
    pub group: u64,
    pub frequency: f64,
    pub num_queries: usize,
    pub ambiguity: f64,
    pub discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub variable: Variable,
    pub grouping: Grouping,
    pub metric: &'static str,
    pub n_groups: usize,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    /// `ok`, `degenerate` (constant input) or `too_few_groups`.
    pub status: &'static str,
    /// Targets with no evaluation query, left out of every group.
    pub targets_without_queries: usize,
}

/// Per-group metrics and frequency correlations. `targets[q]` is the
/// (entity, relation) pair of query `q`; frequencies are indexed by id.
pub fn correlate(
    targets: &[(u32, u32)],
    matrix: &ConflictMatrix,
    entity_freq: &[usize],
    relation_freq: &[usize],
) -> Result<(Vec<GroupRow>, Vec<CorrelationRow>)> {
    if matrix.num_competitors() == 0 {
        return Err(Error::Parameter("correlation needs at least one competitor".into()));
    }
    if targets.len() != matrix.num_queries() {
        return Err(Error::Parameter("query table and conflict matrix disagree".into()));
    }
    let mut groups = Vec::new();
    let mut correlations = Vec::new();
    for variable in [Variable::Entity, Variable::Relation] {
        let freq = match variable {
            Variable::Entity => entity_freq,
            Variable::Relation => relation_freq,
        };
        let ids: Vec<u32> = targets
            .iter()
            .map(|&(e, r)| if variable == Variable::Entity { e } else { r })
            .collect();
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= freq.len()) {
            return Err(Error::OutOfBounds {
                kind: variable.as_str(),
                id: bad as usize,
                len: freq.len(),
            });
        }
        let mut seen = vec![false; freq.len()];
        ids.iter().for_each(|&id| seen[id as usize] = true);
        let missing = seen.iter().filter(|s| !**s).count();
        if missing > 0 {
            log::info!("{missing} {} targets have no query and are dropped", variable.as_str());
        }
        for grouping in Grouping::ALL {
            let mut members: BTreeMap<u64, (f64, Vec<usize>)> = BTreeMap::new();
            for (q, &id) in ids.iter().enumerate() {
                let (key, f) = grouping.key(id, freq[id as usize]);
                members.entry(key).or_insert((f, Vec::new())).1.push(q);
            }
            let start = groups.len();
            for (key, (f, qs)) in members {
                let sub = matrix.restrict(&qs);
                groups.push(GroupRow {
                    variable,
                    grouping,
                    group: key,
                    frequency: f,
                    num_queries: qs.len(),
                    ambiguity: sub.ambiguity()?,
                    discrepancy: sub.discrepancy()?,
                });
            }
            let rows = &groups[start..];
            let xs: Vec<f64> = rows.iter().map(|g| g.frequency).collect();
            for metric in ["ambiguity", "discrepancy"] {
                let ys: Vec<f64> = rows
                    .iter()
                    .map(|g| if metric == "ambiguity" { g.ambiguity } else { g.discrepancy })
                    .collect();
                let (rho, p_value, status) = if xs.len() < 3 {
                    (None, None, "too_few_groups")
                } else {
                    match spearman(&xs, &ys) {
                        Ok(c) => (Some(c.rho), Some(c.p_value), "ok"),
                        Err(Error::Degenerate(_)) => (None, None, "degenerate"),
                        Err(e) => return Err(e),
                    }
                };
                correlations.push(CorrelationRow {
                    variable,
                    grouping,
                    metric,
                    n_groups: xs.len(),
                    rho,
                    p_value,
                    status,
                    targets_without_queries: missing,
                });
            }
        }
    }
    Ok((groups, correlations))
}

/// Reads an audit query table: (entity, relation) per query and the
/// competitor conflict columns.
pub(crate) fn read_query_table(bytes: &[u8]) -> Result<(Vec<(u32, u32)>, ConflictMatrix)> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("query table lacks column {name}")))
    };
    let (ei, ri) = (col("entity")?, col("relation")?);
    let conflict_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("conflict_") && *h != "conflict_count")
        .map(|(i, _)| i)
        .collect();
    let mut targets = Vec::new();
    let mut rows = vec![Vec::new(); conflict_cols.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<u32> {
            rec[i]
                .parse()
                .map_err(|_| Error::Data(format!("bad id {:?} in query table", &rec[i])))
        };
        targets.push((num(ei)?, num(ri)?));
        for (row, &c) in rows.iter_mut().zip(&conflict_cols) {
            row.push(num(c)? != 0);
        }
    }
    let n = targets.len();
    Ok((targets, ConflictMatrix::from_rows(rows, n)?))
}

/// Correlates training frequency with per-group multiplicity using the
/// no-aggregation query table of a finished audit.
pub fn run_correlate(spec: &ExperimentSpec, out: &mut Outputs) -> Result<Vec<CorrelationRow>> {
    let path = spec.output_dir().join("audit/queries_none.csv");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let (targets, matrix) = read_query_table(&bytes)?;
    let graph = spec.load_graph()?;
    let (groups, correlations) =
        correlate(&targets, &matrix, &entity_frequency(&graph), &relation_frequency(&graph))?;
    out.put(
        "correlate/groups.csv",
        csv_bytes(
            &["variable", "grouping", "group", "frequency", "num_queries", "ambiguity", "discrepancy"],
            groups.iter().map(|g| {
                vec![
                    g.variable.as_str().to_owned(),
                    g.grouping.as_str().to_owned(),
                    g.group.to_string(),
                    g.frequency.to_string(),
                    g.num_queries.to_string(),
                    g.ambiguity.to_string(),
                    g.discrepancy.to_string(),
                ]
            }),
        )?,
    );
    out.put(
        "correlate/correlations.csv",
        csv_bytes(
            &[
                "variable",
                "grouping",
                "metric",
                "n_groups",
                "rho",
                "p_value",
                "status",
                "targets_without_queries",
            ],
            correlations.iter().map(|c| {
                vec![
                    c.variable.as_str().to_owned(),
                    c.grouping.as_str().to_owned(),
                    c.metric.to_owned(),
                    c.n_groups.to_string(),
                    fmt_opt(c.rho),
                    fmt_opt(c.p_value),
                    c.status.to_owned(),
                    c.targets_without_queries.to_string(),
                ]
            }),
        )?,
    );
    Ok(correlations)
}
