//! Per-training-node influence on Γ without retraining.
//!
//! For a training node `v` with loss gradient `g_self` and neighbour
//! loss-delta gradient `g_dep`, the score is
//! `I(v) = −(∂Γ/∂θ)ᵀ H⁻¹ (g_self + g_dep)`, with `H` the damped Hessian of
//! the training objective. Deleting `v` (weight `1/m`) is then estimated to
//! change Γ by `−I(v)/m`; a positive score marks a node whose removal is
//! expected to reduce bias.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AuditConfig, MetricConfig, SolverConfig};
use crate::error::{Error, Result};
use crate::graph::{normalized_row, Graph};
use crate::model::{axpy, dot, norm, objective_gradient, GraphContext, InverseHvp, Parameters};
use crate::pdd::{grad_gamma, GammaGradient, GradientMethod, MetricKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordStatus {
    Ok,
    /// The inverse-HVP solve failed; the record is excluded from selection.
    SolveFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceRecord {
    pub node: usize,
    pub i_gamma: f64,
    /// Exactly `−i_gamma / m`.
    pub delta_gamma_est: f64,
    pub grad_self_norm: f64,
    pub grad_noniid_norm: f64,
    pub solver_residual: f64,
    pub solver_iterations: usize,
    pub status: RecordStatus,
    /// Parameters were not stationary when the record was computed.
    pub non_stationary: bool,
}

impl InfluenceRecord {
    pub fn is_usable(&self) -> bool {
        self.status == RecordStatus::Ok
    }
}

/// Training nodes other than `v` whose adjacency row changes when `v` is
/// deleted, with both rows.
fn dependent_rows(params: &Parameters, graph: &Graph, v: usize) -> Result<Vec<(usize, Vec<(usize, f64)>, Vec<(usize, f64)>)>> {
    let spec = &params.spec;
    let (norm_kind, loops) = (spec.normalization, spec.self_loops);
    let mut out = Vec::new();
    // Degrees of neighbours change too, so symmetric rows reach two hops.
    for j in graph.ball(v, 2 * spec.hops()) {
        if j == v || !graph.is_train(j) {
            continue;
        }
        let full = normalized_row(graph, j, norm_kind, loops, None)?;
        let reduced = normalized_row(graph, j, norm_kind, loops, Some(v))?;
        if full != reduced {
            out.push((j, full, reduced));
        }
    }
    Ok(out)
}

/// Loss change of the other training nodes caused by `v`'s presence:
/// `Σ_j L_j(G) − L_j(G without v)` with its parameter gradient.
pub fn non_iid_loss_delta(params: &Parameters, ctx: &GraphContext<'_>, v: usize) -> Result<(f64, Vec<f64>)> {
    let graph = ctx.graph();
    graph.check_node(v)?;
    if !graph.is_train(v) {
        return Err(Error::NotTrainingNode(v));
    }
    let mut grad = vec![0.0; params.len()];
    let mut value = 0.0;
    for (j, full, reduced) in dependent_rows(params, graph, v)? {
        let y = graph.label(j).ok_or(Error::MissingLabel(j))?;
        value += ctx.row_loss_grad(params, &full, y, 1.0, &mut grad);
        value -= ctx.row_loss_grad(params, &reduced, y, -1.0, &mut grad);
    }
    Ok((value, grad))
}

/// Right-hand side `g_self + g_dep` and its two norms.
fn rhs(params: &Parameters, ctx: &GraphContext<'_>, v: usize, non_iid: bool) -> Result<(Vec<f64>, f64, f64)> {
    let mut g = crate::model::node_gradient(params, ctx, v)?;
    let self_norm = norm(&g);
    let mut dep_norm = 0.0;
    if non_iid {
        let (_, dep) = non_iid_loss_delta(params, ctx, v)?;
        dep_norm = norm(&dep);
        axpy(1.0, &dep, &mut g);
    }
    Ok((g, self_norm, dep_norm))
}

/// `H⁻¹ (g_self + g_dep)`: the parameter shift per unit up-weighting of `v`.
pub fn dtheta_deps(params: &Parameters, ctx: &GraphContext<'_>, v: usize, solver: &SolverConfig) -> Result<crate::model::Solution> {
    let (b, _, _) = rhs(params, ctx, v, true)?;
    crate::model::inverse_hvp(params, ctx, &b, solver)
}

/// `I(v)` for one node; recomputes `∂Γ/∂θ`, prefer [`InfluenceEngine`] for
/// many nodes.
pub fn influence_score(
    params: &Parameters,
    ctx: &GraphContext<'_>,
    v: usize,
    metric: &MetricConfig,
    solver: &SolverConfig,
) -> Result<f64> {
    let test = ctx.graph().test_nodes();
    let dg = grad_gamma(params, ctx, &test, metric)?;
    let dtheta = dtheta_deps(params, ctx, v, solver)?;
    Ok(-dot(&dg.grad, &dtheta.x))
}

/// Shared state for scoring every training node at one parameter point.
pub struct InfluenceEngine<'a, 'g> {
    params: &'a Parameters,
    ctx: &'a GraphContext<'g>,
    inverse: InverseHvp<'a, 'g>,
    gamma: GammaGradient,
    non_iid: bool,
    m: usize,
    stationary: bool,
    gradient_norm: f64,
}

impl<'a, 'g> InfluenceEngine<'a, 'g> {
    pub fn new(params: &'a Parameters, ctx: &'a GraphContext<'g>, config: &AuditConfig) -> Result<Self> {
        let graph = ctx.graph();
        let m = graph.train_nodes().len();
        if m == 0 {
            return Err(Error::InvalidGraph("empty training mask".into()));
        }
        let gamma = grad_gamma(params, ctx, &graph.test_nodes(), &config.metric)?;
        let inverse = InverseHvp::new(params, ctx, &config.solver)?;
        let gradient_norm = norm(&objective_gradient(params, ctx)?);
        let stationary = gradient_norm <= config.model.stationarity_tolerance;
        if !stationary {
            log::warn!("objective gradient norm {gradient_norm:e} exceeds the stationarity tolerance");
        }
        Ok(Self {
            params,
            ctx,
            inverse,
            gamma,
            non_iid: config.influence.non_iid,
            m,
            stationary,
            gradient_norm,
        })
    }

    pub fn gamma(&self) -> &GammaGradient {
        &self.gamma
    }

    pub fn training_count(&self) -> usize {
        self.m
    }

    /// Scores `v` against an arbitrary right-hand side (for linearity checks).
    pub fn score_rhs(&self, b: &[f64]) -> Result<f64> {
        Ok(-dot(&self.gamma.grad, &self.inverse.solve(b)?.x))
    }

    pub fn record(&self, v: usize) -> Result<InfluenceRecord> {
        let (b, grad_self_norm, grad_noniid_norm) = rhs(self.params, self.ctx, v, self.non_iid)?;
        let mut record = InfluenceRecord {
            node: v,
            i_gamma: f64::NAN,
            delta_gamma_est: f64::NAN,
            grad_self_norm,
            grad_noniid_norm,
            solver_residual: f64::NAN,
            solver_iterations: 0,
            status: RecordStatus::SolveFailed,
            non_stationary: !self.stationary,
        };
        match self.inverse.solve(&b) {
            Ok(sol) => {
                let i_gamma = -dot(&self.gamma.grad, &sol.x);
                record.i_gamma = i_gamma;
                record.delta_gamma_est = -i_gamma / self.m as f64;
                record.solver_residual = sol.residual;
                record.solver_iterations = sol.iterations;
                record.status = RecordStatus::Ok;
            }
            Err(Error::NonConvergence { iterations, residual }) => {
                log::warn!("inverse-HVP for node {v} failed after {iterations} iterations (residual {residual:e})");
                record.solver_residual = residual;
                record.solver_iterations = iterations;
            }
            Err(e) => return Err(e),
        }
        Ok(record)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InfluenceAudit {
    pub metric: MetricKind,
    pub gradient_method: GradientMethod,
    /// Γ on the test mask at the audited parameters.
    pub gamma: f64,
    pub training_count: usize,
    pub non_iid: bool,
    pub gradient_norm: f64,
    pub records: Vec<InfluenceRecord>,
    /// Wall time of the shared setup (Γ gradient, preconditioner).
    #[serde(skip)]
    pub setup_seconds: f64,
    /// Wall time per record, in record order.
    #[serde(skip)]
    pub node_seconds: Vec<f64>,
}

impl InfluenceAudit {
    pub fn record(&self, node: usize) -> Option<&InfluenceRecord> {
        self.records
            .binary_search_by_key(&node, |r| r.node)
            .ok()
            .map(|k| &self.records[k])
    }

    /// Delimited table, one row per training node in id order.
    pub fn to_table(&self, graph: &Graph) -> String {
        let mut out = String::from(
            "node_id\toriginal_id\ti_gamma\tdelta_gamma_est\tgrad_self_norm\tgrad_noniid_norm\tsolver_residual\tsolver_iterations\tflags\n",
        );
        for r in &self.records {
            let mut flags = Vec::new();
            if r.status == RecordStatus::SolveFailed {
                flags.push("solve-failed");
            }
            if r.non_stationary {
                flags.push("non-stationary");
            }
            let flags = if flags.is_empty() { "-".to_string() } else { flags.join(",") };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.node,
                graph.original_ids()[r.node],
                r.i_gamma,
                r.delta_gamma_est,
                r.grad_self_norm,
                r.grad_noniid_norm,
                r.solver_residual,
                r.solver_iterations,
                flags
            );
        }
        out
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Scores every training node. Records are ordered by node id and do not
/// depend on the worker count.
pub fn estimate_all(params: &Parameters, graph: &Graph, config: &AuditConfig) -> Result<InfluenceAudit> {
    let ctx = GraphContext::new(graph, &params.spec)?;
    let start = Instant::now();
    let engine = InfluenceEngine::new(params, &ctx, config)?;
    let setup_seconds = start.elapsed().as_secs_f64();
    let nodes = graph.train_nodes();
    let timed = |v: usize| -> Result<(InfluenceRecord, f64)> {
        let t = Instant::now();
        let r = engine.record(v)?;
        Ok((r, t.elapsed().as_secs_f64()))
    };
    let results: Vec<(InfluenceRecord, f64)> = if config.influence.workers == 1 {
        nodes.iter().map(|&v| timed(v)).collect::<Result<_>>()?
    } else {
        pool(config.influence.workers)?.install(|| nodes.par_iter().map(|&v| timed(v)).collect::<Result<_>>())?
    };
    let (records, node_seconds) = results.into_iter().unzip();
    Ok(InfluenceAudit {
        metric: config.metric.kind,
        gradient_method: engine.gamma().method,
        gamma: engine.gamma().value,
        training_count: engine.training_count(),
        non_iid: config.influence.non_iid,
        gradient_norm: engine.gradient_norm,
        records,
        setup_seconds,
        node_seconds,
    })
}

/// Rejects a node set whose members' computation graphs share training nodes.
pub fn validate_disjoint(graph: &Graph, hops: usize, nodes: &[usize]) -> Result<()> {
    let cgs: Vec<_> = nodes
        .iter()
        .map(|&v| graph.computation_graph(v, hops))
        .collect::<Result<_>>()?;
    for (a, x) in cgs.iter().enumerate() {
        for y in &cgs[a + 1..] {
            if x.shares_training_nodes(y) {
                return Err(Error::OverlappingComputationGraphs(x.center, y.center));
            }
        }
    }
    Ok(())
}

/// Sum of member scores for a set with pairwise disjoint computation graphs.
pub fn additive_set_score(audit: &InfluenceAudit, graph: &Graph, hops: usize, nodes: &[usize]) -> Result<f64> {
    validate_disjoint(graph, hops, nodes)?;
    nodes
        .iter()
        .map(|&v| {
            audit
                .record(v)
                .map(|r| r.i_gamma)
                .ok_or(Error::NotTrainingNode(v))
        })
        .sum()
}
