use super::summary::metric_rows;
use super::{csv_bytes, fmt_opt, ExperimentSpec, Outputs};
use crate::error::{Error, Result};
use crate::multiplicity::{
    admits, build_level_set, build_report, evaluate_ensembles, evaluate_level_set, evaluate_member,
    train_baseline, train_ensembles, train_pool, MemberResults, MultiplicityReport,
};

/// Trains one baseline and one master pool, then thresholds the pool at
/// every ε of the sweep. Level sets are nested, so the metrics are
/// non-decreasing in ε.
pub fn run_sweep_epsilon(spec: &ExperimentSpec, out: &mut Outputs) -> Result<Vec<MultiplicityReport>> {
    let graph = spec.load_graph()?;
    let opts = spec.audit_options();
    let baseline = train_baseline(&graph, &spec.model, &opts)?;
    let pool = train_pool(&graph, &spec.model, spec.sweep.pool_size, &opts)?;
    let base_res = evaluate_member(baseline.model.as_ref(), &graph, &opts)?;
    let pool_res = pool
        .iter()
        .enumerate()
        .map(|(i, m)| evaluate_member(m.model.as_ref(), &graph, &opts).map_err(|e| Error::member(i + 1, e)))
        .collect::<Result<Vec<MemberResults>>>()?;

    let mut reports = Vec::with_capacity(spec.sweep.epsilons.len());
    for &eps in &spec.sweep.epsilons {
        let admitted: Vec<usize> = (0..pool.len())
            .filter(|&i| admits(baseline.reference_hits, pool[i].reference_hits, eps))
            .collect();
        let comps: Vec<&MemberResults> = admitted.iter().map(|&i| &pool_res[i]).collect();
        let hashes = std::iter::once(&baseline)
            .chain(admitted.iter().map(|&i| &pool[i]))
            .map(|m| vec![m.checkpoint_hash.clone()])
            .collect();
        reports.push(build_report(&base_res, &comps, None, 1, eps, &opts, hashes)?);
    }

    let rows = reports.iter().flat_map(|r| {
        metric_rows(r)
            .into_iter()
            .filter(|m| m.metric != "epsilon")
            .map(move |m| vec![r.epsilon.to_string(), m.metric, fmt_opt(m.value)])
    });
    out.put("sweep_eps/sweep.csv", csv_bytes(&["epsilon", "metric", "value"], rows)?);
    let members = std::iter::once((&baseline, &base_res)).chain(pool.iter().zip(&pool_res));
    out.put(
        "sweep_eps/pool.csv",
        csv_bytes(
            &["member", "seed", "reference_hits", "evaluation_hits", "checkpoint_hash"],
            members.enumerate().map(|(i, (m, r))| {
                vec![
                    i.to_string(),
                    m.seed.to_string(),
                    m.reference_hits.to_string(),
                    r.evaluation.hits_at_k.to_string(),
                    m.checkpoint_hash.clone(),
                ]
            }),
        )?,
    );
    out.put_json("sweep_eps/reports.json", &reports)?;
    Ok(reports)
}

/// Builds the audit level set once, trains ensembles of the largest
/// requested size and evaluates every rule with the first `n` voters of
/// each ensemble for each requested `n`.
pub fn run_sweep_aggregation(spec: &ExperimentSpec, out: &mut Outputs) -> Result<Vec<MultiplicityReport>> {
    let graph = spec.load_graph()?;
    let opts = spec.audit_options();
    let a = &spec.audit;
    let counts = &spec.sweep.aggregate_counts;
    let max_n = counts
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::Config("sweep.aggregate_counts is empty".into()))?;
    let ls = build_level_set(&graph, &spec.model, a.epsilon, a.n_competitors, spec.max_attempts(), &opts)?;
    let mut reports = vec![evaluate_level_set(&graph, &ls, &opts)?];
    let ensembles = train_ensembles(&graph, &ls, max_n, spec.master_seed)?;
    for &rule in &a.rules {
        for &n in counts {
            reports.push(evaluate_ensembles(&graph, &ls, &ensembles, rule, n, &opts)?);
        }
    }
    let rows = reports.iter().flat_map(|r| {
        metric_rows(r)
            .into_iter()
            .map(move |m| vec![r.rule.clone(), r.n_aggregate.to_string(), m.metric, fmt_opt(m.value)])
    });
    out.put(
        "sweep_agg/sweep.csv",
        csv_bytes(&["rule", "n_models", "metric", "value"], rows)?,
    );
    out.put_json("sweep_agg/reports.json", &reports)?;
    Ok(reports)
}
