//! Audit configuration: every tolerance, budget and seed used by a run.
//!
//! Configs are TOML. Every field has a default, so an empty file is valid.
//! Command-line overrides use flat dotted keys (`model.epochs=500`) and take
//! precedence over the file, which takes precedence over the defaults.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::SynthConfig;
use crate::error::{Error, Result};
use crate::graph::{AttributeSchema, Normalization, SplitPolicy};
use crate::model::Arch;
use crate::pdd::{GradientMethod, MetricKind};

const BENCHMARK_TOML: &str = include_str!("../benchmark.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    /// Full-batch, dropout off, optimum refined to stationarity.
    Deterministic,
    /// Adam with dropout on the hidden layer; excluded from oracle comparisons.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub damping: f64,
    pub dropout: f64,
    pub mode: TrainingMode,
    /// Newton refinement after the first-order epochs (convex arch only).
    pub polish: bool,
    pub polish_max_steps: usize,
    pub polish_tolerance: f64,
    pub stationarity_tolerance: f64,
    pub normalization: Normalization,
    pub self_loops: bool,
    /// Where the hidden transform sits relative to the single aggregation.
    pub hidden_placement: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::LinearSoftmax,
            hidden: 16,
            epochs: 1000,
            learning_rate: 1e-3,
            damping: 0.01,
            dropout: 0.5,
            mode: TrainingMode::Deterministic,
            polish: true,
            polish_max_steps: 100,
            polish_tolerance: 1e-10,
            stationarity_tolerance: 1e-3,
            normalization: Normalization::Row,
            self_loops: true,
            hidden_placement: "transform-then-aggregate".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    Cg,
    Lissa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub lissa_iterations: usize,
    /// Neumann scale; 0 means estimate from the top Hessian eigenvalue.
    pub lissa_scale: f64,
    /// Build a dense Cholesky preconditioner once per audit when the
    /// parameter count is at most `precondition_max_dim`.
    pub precondition: bool,
    pub precondition_max_dim: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Cg,
            tolerance: 1e-8,
            max_iterations: 1000,
            lissa_iterations: 1000,
            lissa_scale: 0.0,
            precondition: true,
            precondition_max_dim: 1024,
        }
    }
}

pub const LISSA_ITERATION_CHOICES: [usize; 6] = [10, 50, 100, 500, 1000, 5000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub kind: MetricKind,
    pub lambda: f64,
    pub gradient: GradientMethod,
    pub sinkhorn_reg: f64,
    pub sinkhorn_iters: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            kind: MetricKind::Sp,
            lambda: 0.5,
            gradient: GradientMethod::Auto,
            sinkhorn_reg: 1e-3,
            sinkhorn_iters: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfluenceConfig {
    /// Include the neighbouring-training-node loss delta in the right-hand side.
    pub non_iid: bool,
    /// Worker threads for per-node solves; 0 uses all available cores.
    pub workers: usize,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self {
            non_iid: true,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Largest node-set size for the fidelity sweep; 0 means min(20, m/5).
    pub max_set_size: usize,
    pub budgets: Vec<f64>,
    pub budget_fraction: f64,
    pub speedup_samples: usize,
    pub prop1_pairs: usize,
    pub prop1_hops: usize,
    /// Accuracy drop (fraction) above which debiasing warns.
    pub accuracy_guard: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            max_set_size: 0,
            budgets: vec![0.0, 0.02, 0.04, 0.06, 0.08, 0.10],
            budget_fraction: 0.10,
            speedup_samples: 10,
            prop1_pairs: 100,
            prop1_hops: 2,
            accuracy_guard: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory written by a previous graph export; takes precedence over
    /// the individual file paths.
    pub graph_dir: Option<String>,
    pub edges: Option<String>,
    pub attributes: Option<String>,
    pub train_mask: Option<String>,
    pub val_mask: Option<String>,
    pub test_mask: Option<String>,
    pub params: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub solver: SolverConfig,
    pub metric: MetricConfig,
    pub influence: InfluenceConfig,
    pub split: SplitPolicy,
    pub data: SynthConfig,
    pub experiment: ExperimentConfig,
    pub paths: PathsConfig,
    pub schema: AttributeSchema,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            model: ModelConfig::default(),
            solver: SolverConfig::default(),
            metric: MetricConfig::default(),
            influence: InfluenceConfig::default(),
            split: SplitPolicy::default(),
            data: SynthConfig::default(),
            experiment: ExperimentConfig::default(),
            paths: PathsConfig::default(),
            schema: AttributeSchema::default(),
        }
    }
}

impl AuditConfig {
    /// The frozen desk-scale benchmark shipped with the crate.
    pub fn benchmark() -> Self {
        Self::from_toml_str(BENCHMARK_TOML).expect("shipped benchmark config parses")
    }

    pub fn benchmark_toml() -> &'static str {
        BENCHMARK_TOML
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: AuditConfig = toml::from_str(text).map_err(|e| Error::parse("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value` overrides; values parse as TOML literals and fall
    /// back to bare strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{raw}` is not key=value")))?;
            let value = parse_literal(value.trim());
            set_path(&mut root, key.trim(), value)?;
        }
        let text = toml::to_string(&root).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.damping <= 0.0 || !m.damping.is_finite() {
            return Err(Error::Config("model.damping must be positive".into()));
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return Err(Error::Config("model.dropout must lie in [0, 1)".into()));
        }
        if m.learning_rate <= 0.0 {
            return Err(Error::Config("model.learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.metric.lambda) {
            return Err(Error::Config("metric.lambda must lie in [0, 1]".into()));
        }
        if self.metric.sinkhorn_reg <= 0.0 {
            return Err(Error::Config("metric.sinkhorn_reg must be positive".into()));
        }
        if self.solver.tolerance <= 0.0 {
            return Err(Error::Config("solver.tolerance must be positive".into()));
        }
        if self.solver.method == SolverMethod::Lissa
            && !LISSA_ITERATION_CHOICES.contains(&self.solver.lissa_iterations)
        {
            return Err(Error::Config(format!(
                "solver.lissa_iterations must be one of {LISSA_ITERATION_CHOICES:?}"
            )));
        }
        let f = self.experiment.budget_fraction;
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Config("experiment.budget_fraction must lie in [0, 1]".into()));
        }
        self.data.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        hex::encode(digest)
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }
}

fn parse_literal(text: &str) -> toml::Value {
    let wrapped = format!("v = {text}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut table) => table.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut cursor = root;
    while let Some(part) = parts.next() {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` does not address a table")))?;
        if parts.peek().is_none() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(Error::Config("empty override key".into()))
}

/// Derives independent per-consumer seeds from one root seed.
#[derive(Debug, Clone, Copy)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn derive(&self, label: &str) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.root.to_le_bytes());
        hasher.update(label.as_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}
