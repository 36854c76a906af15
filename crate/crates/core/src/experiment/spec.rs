use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalOptions, TieMode};
use crate::graph::{load_graph, KnowledgeGraph, Split};
use crate::models::ModelConfig;
use crate::multiplicity::AuditOptions;
use crate::synth::{generate, SyntheticSpec};
use crate::voting::VotingRule;

/// Environment variable that replaces the spec's output directory.
pub const OUTPUT_DIR_ENV: &str = "MULTIKGE_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Tab-separated label triples; relative paths resolve against the spec file.
    Files {
        train: PathBuf,
        valid: PathBuf,
        test: PathBuf,
    },
    Synthetic(SyntheticSpec),
}

fn default_k() -> usize {
    10
}
fn default_true() -> bool {
    true
}
fn default_epsilon() -> f64 {
    0.01
}
fn default_n_aggregate() -> usize {
    10
}
fn default_rules() -> Vec<VotingRule> {
    VotingRule::STANDARD.to_vec()
}
fn default_reference() -> Split {
    Split::Valid
}
fn default_evaluation() -> Split {
    Split::Test
}
fn default_epsilons() -> Vec<f64> {
    (0..30).map(|i| 0.06 * i as f64 / 29.0).collect()
}
fn default_pool_size() -> usize {
    30
}
fn default_aggregate_counts() -> Vec<usize> {
    (1..=10).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_true")]
    pub filtered: bool,
    #[serde(default)]
    pub ties: TieMode,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub n_competitors: usize,
    /// Retrains allowed while filling the level set; defaults to `10 * n_competitors`.
    #[serde(default)]
    pub max_attempts: Option<usize>,
    #[serde(default = "default_n_aggregate")]
    pub n_aggregate: usize,
    #[serde(default = "default_rules")]
    pub rules: Vec<VotingRule>,
    /// Split on which ε admission is measured.
    #[serde(default = "default_reference")]
    pub reference_split: Split,
    #[serde(default = "default_evaluation")]
    pub evaluation_split: Split,
    /// Answer-set threshold. Mutually exclusive with `tau_quantile`.
    #[serde(default)]
    pub tau: Option<f64>,
    /// Threshold taken as this quantile of the baseline's reference-split
    /// gold scores.
    #[serde(default)]
    pub tau_quantile: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    /// Retrains in the master pool thresholded at every ε.
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_aggregate_counts")]
    pub aggregate_counts: Vec<usize>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            epsilons: default_epsilons(),
            pool_size: default_pool_size(),
            aggregate_counts: default_aggregate_counts(),
        }
    }
}

/// A complete experiment description. Together with the dataset bytes it
/// determines every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub audit: AuditSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.base_dir = base_dir.to_path_buf();
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let a = &self.audit;
        let fail = |m: String| Err(Error::Config(m));
        if a.k == 0 {
            return fail("audit.k must be at least 1".into());
        }
        if !(a.epsilon >= 0.0 && a.epsilon.is_finite()) {
            return fail(format!("audit.epsilon {} must be non-negative", a.epsilon));
        }
        if a.n_aggregate == 0 {
            return fail("audit.n_aggregate must be at least 1".into());
        }
        if a.tau.is_some() && a.tau_quantile.is_some() {
            return fail("set at most one of audit.tau and audit.tau_quantile".into());
        }
        if let Some(q) = a.tau_quantile {
            if !(0.0..=1.0).contains(&q) {
                return fail(format!("audit.tau_quantile {q} outside [0, 1]"));
            }
        }
        if let Some(e) = self.sweep.epsilons.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return fail(format!("sweep.epsilons contains {e}"));
        }
        if self.sweep.aggregate_counts.contains(&0) {
            return fail("sweep.aggregate_counts must be positive".into());
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The output directory, honouring [`OUTPUT_DIR_ENV`].
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.resolve(&self.output_dir),
        }
    }

    pub fn load_graph(&self) -> Result<KnowledgeGraph> {
        match &self.dataset {
            DatasetSpec::Files { train, valid, test } => {
                load_graph(&self.resolve(train), &self.resolve(valid), &self.resolve(test))
            }
            DatasetSpec::Synthetic(s) => generate(s),
        }
    }

    pub fn max_attempts(&self) -> usize {
        self.audit
            .max_attempts
            .unwrap_or(10 * self.audit.n_competitors)
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            k: self.audit.k,
            filtered: self.audit.filtered,
            ties: self.audit.ties,
        }
    }

    pub fn audit_options(&self) -> AuditOptions {
        AuditOptions {
            eval: self.eval_options(),
            reference_split: self.audit.reference_split,
            evaluation_split: self.audit.evaluation_split,
            master_seed: self.master_seed,
        }
    }
}
