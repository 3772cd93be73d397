//! Synthetic attributed graphs with controllable group bias.
//!
//! Nodes split into two sensitive groups. Edges follow a two-block
//! stochastic block model, attributes are Gaussian with a group-dependent
//! mean shift, and labels come from a logistic rule whose offset depends on
//! the group. The last attribute column is a constant `1` acting as an
//! intercept, since the classifier has no bias term.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{AuditConfig, SeedTree};
use crate::error::{Error, Result};
use crate::graph::{split, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    /// Attribute columns including the trailing intercept column.
    pub d: usize,
    /// Fraction of nodes in sensitive group 1.
    pub group_balance: f64,
    /// Ratio of within-group to cross-group edge probability.
    pub homophily: f64,
    /// Expected degree before deduplication.
    pub avg_degree: f64,
    /// Distance between group means along a fixed unit direction.
    pub attr_shift: f64,
    /// Strength of the group offset in the label rule, in `[0, 1]`.
    pub label_bias: f64,
    /// Logit scale of the attribute part of the label rule.
    pub label_signal: f64,
    /// Logit offset applied at `label_bias = 1`.
    pub bias_offset: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 300,
            d: 8,
            group_balance: 0.5,
            homophily: 4.0,
            avg_degree: 4.0,
            attr_shift: 1.0,
            label_bias: 0.8,
            label_signal: 2.0,
            bias_offset: 2.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 16 {
            return bad(format!("data.n must be at least 16, got {}", self.n));
        }
        if self.d < 2 {
            return bad("data.d must be at least 2 (one attribute plus the intercept)".into());
        }
        if !(0.0..=1.0).contains(&self.group_balance) {
            return bad("data.group_balance must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.label_bias) {
            return bad("data.label_bias must lie in [0, 1]".into());
        }
        if !(self.homophily > 0.0 && self.homophily.is_finite()) {
            return bad("data.homophily must be positive".into());
        }
        if !(self.avg_degree >= 0.0 && self.avg_degree < (self.n - 1) as f64) {
            return bad("data.avg_degree must lie in [0, n - 1)".into());
        }
        for (name, v) in [
            ("attr_shift", self.attr_shift),
            ("label_signal", self.label_signal),
            ("bias_offset", self.bias_offset),
        ] {
            if !v.is_finite() {
                return bad(format!("data.{name} must be finite"));
            }
        }
        let ones = (self.group_balance * self.n as f64).round() as usize;
        if ones == 0 || ones == self.n {
            return Err(Error::Degenerate(format!(
                "group_balance {} leaves a sensitive group empty",
                self.group_balance
            )));
        }
        Ok(())
    }

    /// Within- and cross-group edge probabilities hitting `avg_degree`.
    fn edge_probabilities(&self, ones: usize) -> Result<(f64, f64)> {
        let zeros = self.n - ones;
        let pairs = |k: usize| (k * k.saturating_sub(1) / 2) as f64;
        let same = pairs(ones) + pairs(zeros);
        let cross = (ones * zeros) as f64;
        let target = self.n as f64 * self.avg_degree / 2.0;
        let p_out = target / (self.homophily * same + cross);
        let p_in = self.homophily * p_out;
        if p_in > 1.0 || p_out > 1.0 {
            return Err(Error::Config(format!(
                "avg_degree {} with homophily {} needs an edge probability above 1",
                self.avg_degree, self.homophily
            )));
        }
        Ok((p_in, p_out))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn synth_biased_graph(config: &SynthConfig) -> Result<Graph> {
    config.validate()?;
    let (n, d) = (config.n, config.d);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let ones = (config.group_balance * n as f64).round() as usize;
    let mut sensitive: Vec<usize> = (0..n).map(|v| usize::from(v < ones)).collect();
    sensitive.shuffle(&mut rng);

    let (p_in, p_out) = config.edge_probabilities(ones)?;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if sensitive[u] == sensitive[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let raw = d - 1;
    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..raw).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.into_iter().map(|x| x / norm).collect()
    };
    let shift_dir = unit(&mut rng);
    let mut label_dir = unit(&mut rng);
    if raw >= 2 {
        // Labels depend on the group only through `label_bias`.
        let overlap: f64 = label_dir.iter().zip(&shift_dir).map(|(a, b)| a * b).sum();
        for (l, s) in label_dir.iter_mut().zip(&shift_dir) {
            *l -= overlap * s;
        }
        let norm = label_dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        label_dir.iter_mut().for_each(|x| *x /= norm);
    }

    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for &s in &sensitive {
        let side = if s == 1 { 0.5 } else { -0.5 };
        let x: Vec<f64> = shift_dir
            .iter()
            .map(|&u| rng.sample::<f64, _>(StandardNormal) + side * config.attr_shift * u)
            .collect();
        let signal: f64 = x.iter().zip(&label_dir).map(|(a, b)| a * b).sum();
        let offset = 2.0 * side * config.label_bias * config.bias_offset;
        let y = rng.random::<f64>() < sigmoid(config.label_signal * signal + offset);
        labels.push(Some(usize::from(y)));
        features.extend_from_slice(&x);
        features.push(1.0);
    }
    for class in 0..2 {
        if !labels.contains(&Some(class)) {
            return Err(Error::Degenerate(format!("no node received label {class}")));
        }
    }
    Graph::new(n, edges, features, d, labels, sensitive)
}

/// The configured synthetic graph with its split applied. The split seed
/// derives from the root seed under the `split` label.
pub fn generate(config: &AuditConfig) -> Result<Graph> {
    let graph = synth_biased_graph(&config.data)?;
    let masks = split(&graph, SeedTree::new(config.seed).derive("split"), &config.split)?;
    graph.with_masks(masks)
}
