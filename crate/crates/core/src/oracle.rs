//! Ground truth by retraining, and the experiments that compare it with
//! the influence estimates.
//!
//! Every retraining run starts from the same seed as the baseline, so a
//! difference in Γ reflects the deletion and not optimizer noise. Deleted
//! nodes must be training nodes; the test mask is therefore unchanged.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::AuditConfig;
use crate::debias::select_harmful;
use crate::error::{Error, Result};
use crate::graph::{path_stats, Graph, Normalization, Propagation};
use crate::influence::{estimate_all, InfluenceAudit};
use crate::model::{forward, train, Parameters};
use crate::pdd::{MetricKind, PddReport};

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate("pearson needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("pearson of a constant sequence".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Model and metrics after deleting a node set and retraining.
#[derive(Debug, Clone)]
pub struct Retrained {
    pub graph: Graph,
    pub params: Parameters,
    pub report: PddReport,
}

/// A trained baseline that answers "what happens to Γ if these training
/// nodes are deleted".
#[derive(Debug, Clone)]
pub struct RetrainOracle<'g> {
    graph: &'g Graph,
    config: AuditConfig,
    seed: u64,
    params: Parameters,
    before: PddReport,
}

impl<'g> RetrainOracle<'g> {
    pub fn new(graph: &'g Graph, config: &AuditConfig, seed: u64) -> Result<Self> {
        let params = train(graph, &config.model, seed)?;
        let before = evaluate(&params, graph, config)?;
        Ok(Self {
            graph,
            config: config.clone(),
            seed,
            params,
            before,
        })
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn before(&self) -> &PddReport {
        &self.before
    }

    pub fn retrain(&self, nodes: &[usize]) -> Result<Retrained> {
        for &v in nodes {
            self.graph.check_node(v)?;
            if !self.graph.is_train(v) {
                return Err(Error::NotTrainingNode(v));
            }
        }
        let (graph, _) = self.graph.remove_nodes(nodes)?;
        let params = train(&graph, &self.config.model, self.seed)?;
        let report = evaluate(&params, &graph, &self.config)?;
        Ok(Retrained { graph, params, report })
    }

    /// `Γ₂ − Γ₁` for the given metric.
    pub fn delta(&self, nodes: &[usize], kind: MetricKind) -> Result<f64> {
        Ok(self.retrain(nodes)?.report.get(kind) - self.before.get(kind))
    }
}

fn evaluate(params: &Parameters, graph: &Graph, config: &AuditConfig) -> Result<PddReport> {
    let preds = forward(params, graph)?;
    PddReport::evaluate(&preds, graph, &graph.test_nodes(), &config.metric)
}

/// Actual change of the configured Γ when `nodes` are deleted and the model
/// is retrained from `seed`.
pub fn actual_delta_gamma(graph: &Graph, nodes: &[usize], config: &AuditConfig, seed: u64) -> Result<f64> {
    RetrainOracle::new(graph, config, seed)?.delta(nodes, config.metric.kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetSign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSet {
    pub sign: SetSign,
    pub nodes: Vec<usize>,
    /// Sum of member `delta_gamma_est`.
    pub estimated: f64,
}

/// Greedy order of candidates with the given sign whose computation graphs
/// share no training node with an earlier pick.
fn disjoint_greedy(audit: &InfluenceAudit, graph: &Graph, hops: usize, sign: SetSign, limit: usize) -> Result<Vec<usize>> {
    let mut candidates: Vec<(f64, usize)> = audit
        .records
        .iter()
        .filter(|r| r.is_usable())
        .filter(|r| match sign {
            SetSign::Positive => r.delta_gamma_est > 0.0,
            SetSign::Negative => r.delta_gamma_est < 0.0,
        })
        .map(|r| (r.delta_gamma_est.abs(), r.node))
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut taken = vec![false; graph.node_count()];
    let mut chosen = Vec::new();
    for (_, v) in candidates {
        if chosen.len() == limit {
            break;
        }
        let cg = graph.computation_graph(v, hops)?;
        if cg.member_training_nodes.iter().any(|&u| taken[u]) {
            continue;
        }
        for &u in &cg.member_training_nodes {
            taken[u] = true;
        }
        chosen.push(v);
    }
    Ok(chosen)
}

/// Prefix sets of size `1..=max_size` for the most positive and the most
/// negative estimated ΔΓ, with pairwise disjoint computation graphs.
pub fn build_node_sets(audit: &InfluenceAudit, graph: &Graph, hops: usize, max_size: usize) -> Result<Vec<NodeSet>> {
    let mut sets = Vec::new();
    for sign in [SetSign::Positive, SetSign::Negative] {
        let order = disjoint_greedy(audit, graph, hops, sign, max_size)?;
        let mut estimated = 0.0;
        for k in 0..order.len() {
            let record = audit.record(order[k]).ok_or(Error::NotTrainingNode(order[k]))?;
            estimated += record.delta_gamma_est;
            sets.push(NodeSet {
                sign,
                nodes: order[..=k].to_vec(),
                estimated,
            });
        }
    }
    Ok(sets)
}

/// `max_set_size`, or `min(20, m / 5)` when it is zero.
pub fn fidelity_max_size(config: &AuditConfig, training_count: usize) -> usize {
    match config.experiment.max_set_size {
        0 => (training_count / 5).clamp(1, 20),
        k => k,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityPoint {
    pub sign: SetSign,
    pub nodes: Vec<usize>,
    pub estimated: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FidelityReport {
    pub kind: MetricKind,
    pub non_iid: bool,
    pub gamma_before: f64,
    pub set_sizes: Vec<usize>,
    pub points: Vec<FidelityPoint>,
    pub pearson: f64,
    #[serde(skip)]
    pub seconds: f64,
}

impl FidelityReport {
    /// Pearson after randomly permuting the estimates across points.
    pub fn shuffled_pearson(&self, seed: u64) -> Result<f64> {
        let mut est: Vec<f64> = self.points.iter().map(|p| p.estimated).collect();
        est.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let actual: Vec<f64> = self.points.iter().map(|p| p.actual).collect();
        pearson(&est, &actual)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("sign\tsize\testimated\tactual\tnodes\n");
        for p in &self.points {
            let sign = match p.sign {
                SetSign::Positive => "positive",
                SetSign::Negative => "negative",
            };
            let nodes: Vec<String> = p.nodes.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{sign}\t{}\t{}\t{}\t{}", p.nodes.len(), p.estimated, p.actual, nodes.join(","));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "kind = {}\nnon_iid = {}\ngamma_before = {}\npoints = {}\npearson = {}\n",
            self.kind.as_str(),
            self.non_iid,
            self.gamma_before,
            self.points.len(),
            self.pearson
        )
    }
}

/// Estimated versus retrained ΔΓ over disjoint positive and negative node
/// sets for `config.metric.kind`.
pub fn fidelity_experiment(graph: &Graph, config: &AuditConfig, seed: u64) -> Result<FidelityReport> {
    let start = Instant::now();
    let oracle = RetrainOracle::new(graph, config, seed)?;
    let audit = estimate_all(oracle.params(), graph, config)?;
    let hops = oracle.params().spec.hops();
    let max_size = fidelity_max_size(config, audit.training_count);
    let sets = build_node_sets(&audit, graph, hops, max_size)?;
    let kind = config.metric.kind;
    let run = |set: &NodeSet| -> Result<FidelityPoint> {
        Ok(FidelityPoint {
            sign: set.sign,
            nodes: set.nodes.clone(),
            estimated: set.estimated,
            actual: oracle.delta(&set.nodes, kind)?,
        })
    };
    let points: Vec<FidelityPoint> = if config.influence.workers == 1 {
        sets.iter().map(run).collect::<Result<_>>()?
    } else {
        worker_pool(config.influence.workers)?.install(|| sets.par_iter().map(run).collect::<Result<_>>())?
    };
    let est: Vec<f64> = points.iter().map(|p| p.estimated).collect();
    let act: Vec<f64> = points.iter().map(|p| p.actual).collect();
    let pearson = pearson(&est, &act)?;
    Ok(FidelityReport {
        kind,
        non_iid: config.influence.non_iid,
        gamma_before: oracle.before().get(kind),
        set_sizes: (1..=max_size).collect(),
        points,
        pearson,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedupReport {
    /// Wall time of each single-node retraining sample.
    pub retrain_seconds: Vec<f64>,
    pub setup_seconds: f64,
    /// Wall time of each per-node estimate, in training-node order.
    pub estimate_seconds: Vec<f64>,
    pub t_retrain_avg: f64,
    /// `(setup + Σ estimate) / m`.
    pub t_estimate_avg: f64,
    pub factor: f64,
}

impl SpeedupReport {
    pub fn summary(&self) -> String {
        format!(
            "retrain_samples = {}\nt_retrain_avg = {}\nt_estimate_avg = {}\nsetup_seconds = {}\nfactor = {}\n",
            self.retrain_seconds.len(),
            self.t_retrain_avg,
            self.t_estimate_avg,
            self.setup_seconds,
            self.factor
        )
    }
}

/// Single-threaded comparison of retraining and estimation cost per node.
pub fn speedup_experiment(graph: &Graph, config: &AuditConfig, seed: u64) -> Result<SpeedupReport> {
    let mut serial = config.clone();
    serial.influence.workers = 1;
    let oracle = RetrainOracle::new(graph, &serial, seed)?;
    let audit = estimate_all(oracle.params(), graph, &serial)?;
    let m = audit.training_count;
    let samples = serial.experiment.speedup_samples.clamp(1, m);
    let train_nodes = graph.train_nodes();
    let mut retrain_seconds = Vec::with_capacity(samples);
    for k in 0..samples {
        let v = train_nodes[k * m / samples];
        let t = Instant::now();
        let (pruned, _) = graph.remove_node(v)?;
        train(&pruned, &serial.model, seed)?;
        retrain_seconds.push(t.elapsed().as_secs_f64());
    }
    let t_retrain_avg = retrain_seconds.iter().sum::<f64>() / samples as f64;
    let t_estimate_avg = (audit.setup_seconds + audit.node_seconds.iter().sum::<f64>()) / m as f64;
    Ok(SpeedupReport {
        retrain_seconds,
        setup_seconds: audit.setup_seconds,
        estimate_seconds: audit.node_seconds,
        t_retrain_avg,
        t_estimate_avg,
        factor: t_retrain_avg / t_estimate_avg.max(f64::MIN_POSITIVE),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyRow {
    pub budget: f64,
    pub deleted: usize,
    pub report: PddReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
    pub pearson_sp: f64,
    pub pearson_eo: f64,
}

impl ConsistencyReport {
    /// One row per budget per metric pair.
    pub fn to_table(&self) -> String {
        let mut out = String::from("budget\tdeleted\tpair\tgamma\tdelta\taccuracy\n");
        for r in &self.rows {
            for (pair, gamma, delta) in [
                ("sp", r.report.gamma_sp, r.report.delta_sp),
                ("eo", r.report.gamma_eo, r.report.delta_eo),
            ] {
                let _ = writeln!(out, "{}\t{}\t{pair}\t{gamma}\t{delta}\t{}", r.budget, r.deleted, r.report.accuracy);
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "budgets = {}\npearson_sp = {}\npearson_eo = {}\n",
            self.rows.len(),
            self.pearson_sp,
            self.pearson_eo
        )
    }
}

/// Deletes the most harmful nodes under Γ_mix at each budget and records Γ
/// alongside the traditional gap metrics.
pub fn consistency_experiment(graph: &Graph, config: &AuditConfig, budgets: &[f64], seed: u64) -> Result<ConsistencyReport> {
    let mut mix = config.clone();
    mix.metric.kind = MetricKind::Mix;
    let oracle = RetrainOracle::new(graph, &mix, seed)?;
    let audit = estimate_all(oracle.params(), graph, &mix)?;
    let hops = oracle.params().spec.hops();
    let mut rows = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let nodes = select_harmful(&audit, graph, hops, budget)?;
        let report = oracle.retrain(&nodes)?.report;
        rows.push(ConsistencyRow {
            budget,
            deleted: nodes.len(),
            report,
        });
    }
    let column = |f: fn(&PddReport) -> f64| rows.iter().map(|r| f(&r.report)).collect::<Vec<_>>();
    let pearson_sp = pearson(&column(|r| r.gamma_sp), &column(|r| r.delta_sp))?;
    let pearson_eo = pearson(&column(|r| r.gamma_eo), &column(|r| r.delta_eo))?;
    Ok(ConsistencyReport {
        rows,
        pearson_sp,
        pearson_eo,
    })
}

/// Relative slack on the bound; it is attained exactly on single paths.
const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresentationPair {
    pub deleted: usize,
    pub test_node: usize,
    pub distance: usize,
    /// `‖z_j − z_j⋆‖` relative to the common unit representation norm.
    pub measured: f64,
    /// The same change relative to the actual `‖z_j‖`; informational.
    pub relative_to_own_norm: f64,
    pub path_count: usize,
    pub bound: f64,
    pub violation: bool,
}

/// Representation change of every test node within `hops` of the deleted
/// node `i`, under row-normalized propagation with identity weights and
/// activation. Inputs are projected onto the unit sphere so representations
/// share a common norm; the change is linear, `z_j − z_j⋆ = (Âᴸ)_{ji} x_i`.
pub fn representation_bound_check(graph: &Graph, i: usize, hops: usize, self_loops: bool) -> Result<Vec<RepresentationPair>> {
    graph.check_node(i)?;
    let prop = Propagation::new(graph, Normalization::Row, self_loops)?;
    let d = graph.dim();
    let mut x = graph.features().to_vec();
    for row in x.chunks_mut(d) {
        let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|a| *a /= norm);
        }
    }
    let mut only_i = vec![0.0; x.len()];
    only_i[i * d..(i + 1) * d].copy_from_slice(&x[i * d..(i + 1) * d]);
    let (mut z, mut dz) = (x, only_i);
    for _ in 0..hops {
        z = prop.apply(&z, d);
        dz = prop.apply(&dz, d);
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let xi_norm = norm(&graph.features()[i * d..(i + 1) * d]).min(1.0);
    let mut pairs = Vec::new();
    for j in graph.ball(i, hops) {
        if j == i || !graph.masks().test[j] {
            continue;
        }
        let change = norm(&dz[j * d..(j + 1) * d]);
        let measured = if xi_norm > 0.0 { change } else { 0.0 };
        let own = norm(&z[j * d..(j + 1) * d]);
        let stats = path_stats(graph, j, i, hops, self_loops)?;
        let bound = stats.representation_bound().unwrap_or(0.0);
        pairs.push(RepresentationPair {
            deleted: i,
            test_node: j,
            distance: stats.shortest_distance.unwrap_or(0),
            measured,
            relative_to_own_norm: if own > 0.0 { change / own } else { 0.0 },
            path_count: stats.path_count,
            bound,
            violation: measured > bound * (1.0 + BOUND_SLACK),
        });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundSweep {
    pub hops: usize,
    pub pairs: Vec<RepresentationPair>,
    pub violations: usize,
}

impl BoundSweep {
    pub fn to_table(&self) -> String {
        let mut out = String::from("deleted\ttest_node\tdistance\tpath_count\tmeasured\tbound\trelative_to_own_norm\tviolation\n");
        for p in &self.pairs {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                p.deleted, p.test_node, p.distance, p.path_count, p.measured, p.bound, p.relative_to_own_norm, p.violation
            );
        }
        out
    }
}

/// Checks randomly chosen training nodes as deletion candidates until at
/// least `min_pairs` (deleted, test) pairs have been collected or every
/// training node has been tried.
pub fn bound_sweep(graph: &Graph, hops: usize, self_loops: bool, min_pairs: usize, seed: u64) -> Result<BoundSweep> {
    let mut candidates = graph.train_nodes();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut pairs = Vec::new();
    for i in candidates {
        if pairs.len() >= min_pairs {
            break;
        }
        pairs.extend(representation_bound_check(graph, i, hops, self_loops)?);
    }
    let violations = pairs.iter().filter(|p| p.violation).count();
    Ok(BoundSweep { hops, pairs, violations })
}
