//! Experiment orchestration: spec files, audits, sweeps, frequency
//! correlation and report files.
//!
//! Every command collects its files in memory and hands them to a single
//! writer at the end, so output bytes never depend on thread scheduling.
//! A `status.json` next to the files records whether the command finished.

mod audit;
mod correlate;
mod spec;
mod summary;
mod sweep;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

pub use audit::{run_audit, write_query_table, AuditOutcome, AnswerSetSummary, LevelSetSummary};
pub use correlate::{correlate, run_correlate, CorrelationRow, GroupRow, Grouping, Variable};
pub use spec::{AuditSpec, DatasetSpec, ExperimentSpec, SweepSpec, OUTPUT_DIR_ENV};
pub use summary::{metric_rows, read_metrics, render_summary, run_report, MetricRow};
pub use sweep::{run_sweep_aggregation, run_sweep_epsilon};

/// Files produced by a command, keyed by path relative to the output root.
#[derive(Debug, Default)]
pub struct Outputs {
    files: BTreeMap<PathBuf, Vec<u8>>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, rel: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.insert(rel.into(), bytes);
    }

    pub fn put_json<T: Serialize>(&mut self, rel: impl Into<PathBuf>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.put(rel, bytes);
        Ok(())
    }

    pub fn get(&self, rel: &Path) -> Option<&[u8]> {
        self.files.get(rel).map(Vec::as_slice)
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.keys().map(PathBuf::as_path)
    }

    /// Writes every file under `root` in path order.
    pub fn commit(&self, root: &Path) -> Result<()> {
        for (rel, bytes) in &self.files {
            let path = root.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Status<'a> {
    command: &'a str,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Runs `f`, then writes whatever it produced plus `<command>/status.json`.
/// Files from a failed command are kept and the status marks them partial.
pub fn run_command<T>(
    root: &Path,
    command: &str,
    f: impl FnOnce(&mut Outputs) -> Result<T>,
) -> Result<T> {
    let mut out = Outputs::new();
    let result = f(&mut out);
    let status = Status {
        command,
        status: if result.is_ok() { "complete" } else { "partial" },
        error: result.as_ref().err().map(ToString::to_string),
    };
    out.put_json(Path::new(command).join("status.json"), &status)?;
    out.commit(root)?;
    result
}

/// Trains the spec's model config as given and writes its checkpoint,
/// loss curve and filtered/raw Hits@K per split under `train/`.
pub fn run_train(spec: &ExperimentSpec, out: &mut Outputs) -> Result<crate::models::EmbeddingModel> {
    use crate::eval::{hits_at_k, EvalOptions};
    use crate::graph::{queries_from_split, Split};

    let graph = spec.load_graph()?;
    let model = crate::train::train(&graph, &spec.model)?.model;
    out.put("train/checkpoint.json", model.to_checkpoint_bytes()?);
    out.put(
        "train/losses.csv",
        csv_bytes(
            &["epoch", "loss"],
            model
                .epoch_losses
                .iter()
                .enumerate()
                .map(|(i, l)| vec![(i + 1).to_string(), l.to_string()]),
        )?,
    );
    let mut rows = Vec::new();
    for split in [Split::Valid, Split::Test] {
        let queries = queries_from_split(&graph, split);
        if queries.is_empty() {
            continue;
        }
        for filtered in [true, false] {
            let opts = EvalOptions {
                filtered,
                ..spec.eval_options()
            };
            let r = hits_at_k(&model, &graph, &queries, opts)?;
            rows.push(vec![
                split.as_str().to_owned(),
                if filtered { "filtered" } else { "raw" }.to_owned(),
                opts.k.to_string(),
                r.hits_at_k.to_string(),
            ]);
        }
    }
    out.put("train/hits.csv", csv_bytes(&["split", "setting", "k", "hits"], rows)?);
    Ok(model)
}

/// Formats an optional metric for CSV output (empty when absent).
pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub(crate) fn csv_bytes(
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv buffer: {e}")))
}
