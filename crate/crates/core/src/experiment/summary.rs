use std::fmt::Write as _;
use std::path::Path;

use super::{csv_bytes, fmt_opt, Outputs};
use crate::error::{Error, Result};
use crate::multiplicity::MultiplicityReport;

/// One `rule,n_aggregate,metric,value` row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub rule: String,
    pub n_aggregate: usize,
    pub metric: String,
    pub value: Option<f64>,
}

/// The scalar metrics of a report, in a fixed order.
pub fn metric_rows(r: &MultiplicityReport) -> Vec<MetricRow> {
    let metrics: [(&str, Option<f64>); 14] = [
        ("epsilon", Some(r.epsilon)),
        ("k", Some(r.k as f64)),
        ("num_queries", Some(r.num_queries as f64)),
        ("num_competitors", Some(r.num_competitors as f64)),
        ("baseline_hits", Some(r.baseline_hits)),
        ("baseline_reference_hits", Some(r.baseline_reference_hits)),
        ("mean_hits", r.mean_hits),
        ("ambiguity", r.ambiguity),
        ("discrepancy", r.discrepancy),
        ("bound", Some(r.bound)),
        ("bound_raw", Some(r.bound_raw)),
        ("bound_on_evaluation_raw", Some(r.bound_on_evaluation_raw)),
        ("realized_epsilon", r.realized_epsilon),
        ("epsilon_deviation", r.epsilon_deviation),
    ];
    metrics
        .into_iter()
        .map(|(m, v)| MetricRow {
            rule: r.rule.clone(),
            n_aggregate: r.n_aggregate,
            metric: m.to_owned(),
            value: v,
        })
        .collect()
}

pub(crate) fn metrics_csv(rows: &[MetricRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &["rule", "n_aggregate", "metric", "value"],
        rows.iter().map(|r| {
            vec![
                r.rule.clone(),
                r.n_aggregate.to_string(),
                r.metric.clone(),
                fmt_opt(r.value),
            ]
        }),
    )
}

pub fn read_metrics(bytes: &[u8]) -> Result<Vec<MetricRow>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::Data(format!("metrics row with {} fields", rec.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Data(format!("bad number {s:?} in metrics")))
        };
        rows.push(MetricRow {
            rule: rec[0].to_owned(),
            n_aggregate: rec[1]
                .parse()
                .map_err(|_| Error::Data(format!("bad n_aggregate {:?}", &rec[1])))?,
            metric: rec[2].to_owned(),
            value: if rec[3].is_empty() { None } else { Some(num(&rec[3])?) },
        });
    }
    Ok(rows)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.4}"))
}

/// Fixed-width table with one line per (rule, n_aggregate), built only
/// from metric rows.
pub fn render_summary(rows: &[MetricRow], k: usize) -> String {
    let mut keys: Vec<(&str, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.rule.as_str(), r.n_aggregate)) {
            keys.push((r.rule.as_str(), r.n_aggregate));
        }
    }
    let get = |rule: &str, n: usize, metric: &str| {
        rows.iter()
            .find(|r| r.rule == rule && r.n_aggregate == n && r.metric == metric)
            .and_then(|r| r.value)
    };
    let mut s = String::new();
    let hits = format!("Hits@{k}");
    let base_hits = format!("base Hits@{k}");
    writeln!(
        s,
        "{:<10} {:>3} {:>11} {:>10} {:>12} {:>8} {:>9} {:>14}",
        "rule", "n", "competitors", "ambiguity", "discrepancy", "bound", hits, base_hits
    )
    .unwrap();
    for (rule, n) in keys {
        let label = if rule == "none" { "w/o" } else { rule };
        writeln!(
            s,
            "{:<10} {:>3} {:>11} {:>10} {:>12} {:>8} {:>9} {:>14}",
            label,
            n,
            get(rule, n, "num_competitors").map_or("-".to_owned(), |c| format!("{c}")),
            cell(get(rule, n, "ambiguity")),
            cell(get(rule, n, "discrepancy")),
            cell(get(rule, n, "bound")),
            cell(get(rule, n, "mean_hits")),
            cell(get(rule, n, "baseline_hits")),
        )
        .unwrap();
    }
    s
}

/// Rebuilds `audit/summary.txt` from `audit/metrics.csv` under `root`.
pub fn run_report(root: &Path, out: &mut Outputs) -> Result<String> {
    let path = root.join("audit/metrics.csv");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let rows = read_metrics(&bytes)?;
    let k = rows
        .iter()
        .find(|r| r.metric == "k")
        .and_then(|r| r.value)
        .ok_or_else(|| Error::Data("metrics.csv has no k row".into()))? as usize;
    let text = render_summary(&rows, k);
    out.put("audit/summary.txt", text.clone().into_bytes());
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_round_trip() {
        let rows = vec![
            MetricRow {
                rule: "none".into(),
                n_aggregate: 1,
                metric: "ambiguity".into(),
                value: Some(0.1 + 0.2),
            },
            MetricRow {
                rule: "range".into(),
                n_aggregate: 10,
                metric: "discrepancy".into(),
                value: None,
            },
        ];
        assert_eq!(read_metrics(&metrics_csv(&rows).unwrap()).unwrap(), rows);
    }

    #[test]
    fn summary_marks_missing_metrics() {
        let rows = vec![MetricRow {
            rule: "none".into(),
            n_aggregate: 1,
            metric: "baseline_hits".into(),
            value: Some(0.5),
        }];
        let s = render_summary(&rows, 10);
        assert!(s.contains("w/o"));
        assert!(s.contains("0.5000"));
        assert!(s.contains(" -"));
    }
}
