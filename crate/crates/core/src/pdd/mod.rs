//! Distribution-level bias metrics over predicted probabilities, the
//! classic rate-based fairness metrics, and `∂Γ/∂θ`.

mod transport;

use serde::{Deserialize, Serialize};

pub use transport::{
    quantile_matching, sinkhorn_point_gradients, sinkhorn_w1, wasserstein1_1d, EmpiricalDistribution, Matching,
    SinkhornResult, SINKHORN_MARGINAL_TOLERANCE,
};

use crate::config::MetricConfig;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{GraphContext, Input, NodeEval, Parameters, Predictions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    /// Statistical parity: all nodes per sensitive group.
    Sp,
    /// Equal opportunity: ground-truth positive nodes per group.
    Eo,
    /// Mean pairwise distance across all sensitive groups.
    Generalized,
    /// `λ·sp + (1 − λ)·eo`, with `λ` from the metric config.
    Mix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMethod {
    /// Sorted subgradient for two classes, Sinkhorn otherwise.
    Auto,
    SortedSubgradient,
    Sinkhorn,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Sp => "sp",
            MetricKind::Eo => "eo",
            MetricKind::Generalized => "generalized",
            MetricKind::Mix => "mix",
        }
    }
}

impl GradientMethod {
    pub fn resolve(self, classes: usize) -> Result<Self> {
        match (self, classes) {
            (Self::Auto, 2) => Ok(Self::SortedSubgradient),
            (Self::Auto, _) => Ok(Self::Sinkhorn),
            (Self::SortedSubgradient, c) if c != 2 => {
                Err(Error::Config("sorted-subgradient needs a binary task".into()))
            }
            (m, _) => Ok(m),
        }
    }
}

/// Mask nodes per sensitive group, optionally restricted to label 1.
fn groups(graph: &Graph, mask: &[usize], positives_only: bool) -> Result<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new(); graph.sensitive_arity()];
    for &v in mask {
        graph.check_node(v)?;
        if positives_only && graph.label(v) != Some(1) {
            continue;
        }
        out[graph.sensitive()[v]].push(v);
    }
    for (s, members) in out.iter().enumerate() {
        if members.is_empty() {
            let cell = if positives_only { " with label 1" } else { "" };
            return Err(Error::EmptyDistribution(format!("sensitive group {s}{cell} has no nodes in the mask")));
        }
    }
    Ok(out)
}

fn distribution(preds: &Predictions, nodes: &[usize]) -> Result<EmpiricalDistribution> {
    if preds.classes == 2 {
        let xs: Vec<f64> = nodes.iter().map(|&v| preds.positive(v)).collect();
        EmpiricalDistribution::from_scalars(&xs)
    } else {
        let xs: Vec<f64> = nodes.iter().flat_map(|&v| preds.row(v).iter().copied()).collect();
        EmpiricalDistribution::new(preds.classes, xs)
    }
}

/// Distance between two groups plus `∂/∂probs` per member node, laid out
/// as `(node, dprobs)`.
struct PairTerm {
    value: f64,
    grads: Vec<(usize, Vec<f64>)>,
}

fn pair_term(preds: &Predictions, a: &[usize], b: &[usize], method: GradientMethod, cfg: &MetricConfig) -> Result<PairTerm> {
    let c = preds.classes;
    match method {
        GradientMethod::SortedSubgradient => {
            let xa: Vec<f64> = a.iter().map(|&v| preds.positive(v)).collect();
            let xb: Vec<f64> = b.iter().map(|&v| preds.positive(v)).collect();
            let m = quantile_matching(&xa, a, &xb, b);
            let lift = |v: usize, g: f64| {
                let mut d = vec![0.0; c];
                d[1] = g;
                (v, d)
            };
            let grads = a
                .iter()
                .zip(&m.grad_a)
                .map(|(&v, &g)| lift(v, g))
                .chain(b.iter().zip(&m.grad_b).map(|(&v, &g)| lift(v, g)))
                .collect();
            Ok(PairTerm { value: m.value, grads })
        }
        GradientMethod::Sinkhorn | GradientMethod::Auto => {
            let da = distribution(preds, a)?;
            let db = distribution(preds, b)?;
            let r = sinkhorn_w1(&da, &db, cfg.sinkhorn_reg, cfg.sinkhorn_iters)?;
            let (ga, gb) = sinkhorn_point_gradients(&da, &db, &r);
            let k = da.dim();
            let lift = |v: usize, g: &[f64]| {
                if k == 1 {
                    let mut d = vec![0.0; c];
                    d[1] = g[0];
                    (v, d)
                } else {
                    (v, g.to_vec())
                }
            };
            let grads = a
                .iter()
                .enumerate()
                .map(|(i, &v)| lift(v, &ga[i * k..(i + 1) * k]))
                .chain(b.iter().enumerate().map(|(j, &v)| lift(v, &gb[j * k..(j + 1) * k])))
                .collect();
            Ok(PairTerm { value: r.distance, grads })
        }
    }
}

/// Weighted pair terms that make up a metric.
fn terms(graph: &Graph, mask: &[usize], kind: MetricKind, lambda: f64) -> Result<Vec<(f64, Vec<usize>, Vec<usize>)>> {
    let two_group = |positives: bool, w: f64| -> Result<Vec<(f64, Vec<usize>, Vec<usize>)>> {
        let g = groups(graph, mask, positives)?;
        if g.len() != 2 {
            return Err(Error::Config(format!(
                "pairwise metric needs a binary sensitive attribute, found arity {}",
                g.len()
            )));
        }
        let mut it = g.into_iter();
        Ok(vec![(w, it.next().unwrap_or_default(), it.next().unwrap_or_default())])
    };
    match kind {
        MetricKind::Sp => two_group(false, 1.0),
        MetricKind::Eo => two_group(true, 1.0),
        MetricKind::Mix => {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::Config(format!("mix weight {lambda} outside [0, 1]")));
            }
            let mut out = Vec::new();
            if lambda > 0.0 {
                out.extend(two_group(false, lambda)?);
            }
            if lambda < 1.0 {
                out.extend(two_group(true, 1.0 - lambda)?);
            }
            Ok(out)
        }
        MetricKind::Generalized => {
            let g = groups(graph, mask, false)?;
            let s = g.len();
            let w = 2.0 / (s * (s - 1)) as f64;
            let mut out = Vec::new();
            for i in 0..s {
                for j in i + 1..s {
                    out.push((w, g[i].clone(), g[j].clone()));
                }
            }
            Ok(out)
        }
    }
}

fn value_method(classes: usize) -> GradientMethod {
    if classes == 2 {
        GradientMethod::SortedSubgradient
    } else {
        GradientMethod::Sinkhorn
    }
}

/// Γ of the requested kind. Binary tasks use exact 1-D transport; larger
/// label spaces fall back to Sinkhorn on full probability vectors.
pub fn gamma(preds: &Predictions, graph: &Graph, mask: &[usize], kind: MetricKind, cfg: &MetricConfig) -> Result<f64> {
    let method = value_method(preds.classes);
    let mut total = 0.0;
    for (w, a, b) in terms(graph, mask, kind, cfg.lambda)? {
        total += w * pair_term(preds, &a, &b, method, cfg)?.value;
    }
    Ok(total)
}

pub fn gamma_sp(preds: &Predictions, graph: &Graph, mask: &[usize], cfg: &MetricConfig) -> Result<f64> {
    gamma(preds, graph, mask, MetricKind::Sp, cfg)
}

pub fn gamma_eo(preds: &Predictions, graph: &Graph, mask: &[usize], cfg: &MetricConfig) -> Result<f64> {
    gamma(preds, graph, mask, MetricKind::Eo, cfg)
}

pub fn gamma_generalized(preds: &Predictions, graph: &Graph, mask: &[usize], cfg: &MetricConfig) -> Result<f64> {
    gamma(preds, graph, mask, MetricKind::Generalized, cfg)
}

pub fn gamma_mix(preds: &Predictions, graph: &Graph, mask: &[usize], lambda: f64, cfg: &MetricConfig) -> Result<f64> {
    let cfg = MetricConfig { lambda, ..cfg.clone() };
    gamma(preds, graph, mask, MetricKind::Mix, &cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaGradient {
    /// Γ evaluated by the same method as the gradient.
    pub value: f64,
    pub grad: Vec<f64>,
    pub method: GradientMethod,
}

/// `∂Γ/∂θ` with the optimal coupling held fixed.
pub fn grad_gamma(params: &Parameters, ctx: &GraphContext<'_>, mask: &[usize], cfg: &MetricConfig) -> Result<GammaGradient> {
    let graph = ctx.graph();
    let c = params.spec.classes;
    let method = cfg.gradient.resolve(c)?;
    if method == GradientMethod::Sinkhorn && cfg.sinkhorn_reg <= 0.0 {
        return Err(Error::Config("sinkhorn regularization must be positive".into()));
    }
    let preds = ctx.predictions(params);
    let mut dprobs = vec![0.0; graph.node_count() * c];
    let mut touched = vec![false; graph.node_count()];
    let mut value = 0.0;
    for (w, a, b) in terms(graph, mask, cfg.kind, cfg.lambda)? {
        let term = pair_term(&preds, &a, &b, method, cfg)?;
        value += w * term.value;
        for (v, g) in term.grads {
            touched[v] = true;
            for (acc, gk) in dprobs[v * c..(v + 1) * c].iter_mut().zip(&g) {
                *acc += w * gk;
            }
        }
    }
    let mut grad = vec![0.0; params.len()];
    for v in (0..graph.node_count()).filter(|&v| touched[v]) {
        let eval = NodeEval::new(params, ctx, Input::Node(v), None);
        eval.backprop_probs(params, ctx, &dprobs[v * c..(v + 1) * c], 1.0, &mut grad);
    }
    Ok(GammaGradient { value, grad, method })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraditionalMetrics {
    pub delta_sp: f64,
    pub delta_eo: f64,
    pub accuracy: f64,
}

fn rate_gap(preds: &Predictions, groups: &[Vec<usize>]) -> f64 {
    let rates: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().filter(|&&v| preds.label(v) == 1).count() as f64 / g.len() as f64)
        .collect();
    let max = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Rate gaps on arg-max labels (largest gap across groups) and accuracy.
pub fn traditional_metrics(preds: &Predictions, graph: &Graph, mask: &[usize]) -> Result<TraditionalMetrics> {
    let delta_sp = rate_gap(preds, &groups(graph, mask, false)?);
    let delta_eo = rate_gap(preds, &groups(graph, mask, true)?);
    let labelled: Vec<usize> = mask.iter().copied().filter(|&v| graph.label(v).is_some()).collect();
    if labelled.is_empty() {
        return Err(Error::EmptyDistribution("no labelled nodes in the mask".into()));
    }
    let correct = labelled.iter().filter(|&&v| graph.label(v) == Some(preds.label(v))).count();
    Ok(TraditionalMetrics {
        delta_sp,
        delta_eo,
        accuracy: correct as f64 / labelled.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PddReport {
    pub gamma_sp: f64,
    pub gamma_eo: f64,
    pub gamma_generalized: f64,
    pub lambda: f64,
    pub gamma_mix: f64,
    pub delta_sp: f64,
    pub delta_eo: f64,
    pub accuracy: f64,
}

impl PddReport {
    pub fn evaluate(preds: &Predictions, graph: &Graph, mask: &[usize], cfg: &MetricConfig) -> Result<Self> {
        let gamma_sp = gamma_sp(preds, graph, mask, cfg)?;
        let gamma_eo = gamma_eo(preds, graph, mask, cfg)?;
        let gamma_generalized = if graph.sensitive_arity() == 2 {
            gamma_sp
        } else {
            gamma_generalized(preds, graph, mask, cfg)?
        };
        let t = traditional_metrics(preds, graph, mask)?;
        Ok(Self {
            gamma_sp,
            gamma_eo,
            gamma_generalized,
            lambda: cfg.lambda,
            gamma_mix: cfg.lambda * gamma_sp + (1.0 - cfg.lambda) * gamma_eo,
            delta_sp: t.delta_sp,
            delta_eo: t.delta_eo,
            accuracy: t.accuracy,
        })
    }

    pub fn get(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::Sp => self.gamma_sp,
            MetricKind::Eo => self.gamma_eo,
            MetricKind::Generalized => self.gamma_generalized,
            MetricKind::Mix => self.gamma_mix,
        }
    }

    /// `key = value` lines; floats use shortest round-trip formatting.
    pub fn to_key_value(&self) -> String {
        format!(
            "gamma_sp = {}\ngamma_eo = {}\ngamma_generalized = {}\nlambda = {}\ngamma_mix = {}\ndelta_sp = {}\ndelta_eo = {}\naccuracy = {}\n",
            self.gamma_sp,
            self.gamma_eo,
            self.gamma_generalized,
            self.lambda,
            self.gamma_mix,
            self.delta_sp,
            self.delta_eo,
            self.accuracy
        )
    }
}
