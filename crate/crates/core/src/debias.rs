//! Budgeted deletion of the training nodes estimated to contribute most to
//! Γ_mix, followed by retraining and before/after evaluation.

use serde::Serialize;

use crate::config::AuditConfig;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::influence::{estimate_all, InfluenceAudit};
use crate::oracle::RetrainOracle;
use crate::pdd::{MetricKind, PddReport};

/// `⌈fraction · m⌉`, guarded against float noise just above an integer.
pub fn deletion_budget(fraction: f64, training_count: usize) -> usize {
    let raw = fraction * training_count as f64;
    let rounded = raw.round();
    let k = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.ceil() };
    (k.max(0.0) as usize).min(training_count)
}

/// Greedily picks nodes with the largest positive score (deleting them is
/// estimated to lower Γ) whose computation graphs share no training node,
/// up to `⌈budget_fraction · m⌉`.
pub fn select_harmful(audit: &InfluenceAudit, graph: &Graph, hops: usize, budget_fraction: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&budget_fraction) {
        return Err(Error::Config(format!("budget fraction {budget_fraction} outside [0, 1]")));
    }
    let budget = deletion_budget(budget_fraction, audit.training_count);
    if budget == 0 {
        return Ok(Vec::new());
    }
    let mut candidates: Vec<(f64, usize)> = audit
        .records
        .iter()
        .filter(|r| r.is_usable() && r.i_gamma > 0.0)
        .map(|r| (r.i_gamma, r.node))
        .collect();
    if candidates.is_empty() {
        log::warn!("no training node has a positive influence on the audited metric");
        return Ok(Vec::new());
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut taken = vec![false; graph.node_count()];
    let mut chosen = Vec::with_capacity(budget);
    for (_, v) in candidates {
        if chosen.len() == budget {
            break;
        }
        let cg = graph.computation_graph(v, hops)?;
        if cg.member_training_nodes.iter().any(|&u| taken[u]) {
            continue;
        }
        cg.member_training_nodes.iter().for_each(|&u| taken[u] = true);
        chosen.push(v);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

#[derive(Debug, Clone, Serialize)]
pub struct DebiasReport {
    pub budget_fraction: f64,
    pub lambda: f64,
    /// Node ids in the input graph.
    pub deleted_nodes: Vec<usize>,
    pub before: PddReport,
    pub after: PddReport,
    /// `after.accuracy − before.accuracy`.
    pub accuracy_delta: f64,
    pub accuracy_warning: bool,
}

impl DebiasReport {
    pub fn summary(&self) -> String {
        let mut out = format!(
            "budget_fraction = {}\nlambda = {}\ndeleted = {}\naccuracy_delta = {}\naccuracy_warning = {}\n",
            self.budget_fraction,
            self.lambda,
            self.deleted_nodes.len(),
            self.accuracy_delta,
            self.accuracy_warning
        );
        for (tag, r) in [("before", &self.before), ("after", &self.after)] {
            for line in r.to_key_value().lines() {
                out.push_str(&format!("{tag}.{line}\n"));
            }
        }
        out
    }
}

/// Pruned graph and retrained model alongside the report.
#[derive(Debug, Clone)]
pub struct DebiasOutcome {
    pub report: DebiasReport,
    pub pruned: Graph,
    pub params: crate::model::Parameters,
}

/// Audits the vanilla model under Γ_mix(`lambda`), deletes the selected
/// nodes once, retrains from `seed` and evaluates both models on the test
/// mask.
pub fn debias_run(graph: &Graph, config: &AuditConfig, budget_fraction: f64, lambda: f64, seed: u64) -> Result<DebiasOutcome> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    let mut mix = config.clone();
    mix.metric.kind = MetricKind::Mix;
    mix.metric.lambda = lambda;
    let oracle = RetrainOracle::new(graph, &mix, seed)?;
    let audit = estimate_all(oracle.params(), graph, &mix)?;
    let deleted = select_harmful(&audit, graph, oracle.params().spec.hops(), budget_fraction)?;
    let retrained = oracle.retrain(&deleted)?;
    let before = oracle.before().clone();
    let after = retrained.report;
    let accuracy_delta = after.accuracy - before.accuracy;
    let accuracy_warning = -accuracy_delta > config.experiment.accuracy_guard;
    if accuracy_warning {
        log::warn!(
            "accuracy fell from {:.4} to {:.4} after deleting {} nodes",
            before.accuracy,
            after.accuracy,
            deleted.len()
        );
    }
    Ok(DebiasOutcome {
        report: DebiasReport {
            budget_fraction,
            lambda,
            deleted_nodes: deleted,
            before,
            after,
            accuracy_delta,
            accuracy_warning,
        },
        pruned: retrained.graph,
        params: retrained.params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate;
    use crate::influence::validate_disjoint;
    use crate::model::{forward, train};

    fn setup() -> (AuditConfig, Graph) {
        let mut cfg = AuditConfig::benchmark();
        cfg.data.n = 120;
        cfg.split.train_cap = 20;
        cfg.influence.workers = 1;
        cfg.metric.kind = MetricKind::Mix;
        let g = generate(&cfg).unwrap();
        (cfg, g)
    }

    #[test]
    fn budget_rounds_up() {
        assert_eq!(deletion_budget(0.01, 100), 1);
        assert_eq!(deletion_budget(0.1, 100), 10);
        assert_eq!(deletion_budget(0.105, 100), 11);
        assert_eq!(deletion_budget(0.0, 100), 0);
        assert_eq!(deletion_budget(0.07, 100), 7);
    }

    #[test]
    fn one_percent_of_hundred_selects_at_most_one() {
        let (cfg, g) = setup();
        let params = train(&g, &cfg.model, 1).unwrap();
        let mut audit = estimate_all(&params, &g, &cfg).unwrap();
        audit.training_count = 100;
        assert!(select_harmful(&audit, &g, 1, 0.01).unwrap().len() <= 1);
    }

    #[test]
    fn selection_is_positive_disjoint_and_within_budget() {
        let (cfg, g) = setup();
        let params = train(&g, &cfg.model, 1).unwrap();
        let audit = estimate_all(&params, &g, &cfg).unwrap();
        let chosen = select_harmful(&audit, &g, 1, 0.3).unwrap();
        assert!(chosen.len() <= deletion_budget(0.3, audit.training_count));
        validate_disjoint(&g, 1, &chosen).unwrap();
        for v in &chosen {
            assert!(g.is_train(*v));
            assert!(audit.record(*v).unwrap().i_gamma > 0.0);
        }
    }

    #[test]
    fn non_positive_scores_select_nothing() {
        let (cfg, g) = setup();
        let params = train(&g, &cfg.model, 1).unwrap();
        let mut audit = estimate_all(&params, &g, &cfg).unwrap();
        for r in &mut audit.records {
            r.i_gamma = -r.i_gamma.abs();
        }
        assert!(select_harmful(&audit, &g, 1, 1.0).unwrap().is_empty());
    }

    #[test]
    fn zero_budget_is_a_no_op() {
        let (cfg, g) = setup();
        let out = debias_run(&g, &cfg, 0.0, 0.5, 1).unwrap();
        assert!(out.report.deleted_nodes.is_empty());
        assert_eq!(out.report.before, out.report.after);
        assert_eq!(out.report.accuracy_delta, 0.0);
    }

    #[test]
    fn before_metrics_match_an_independent_evaluation() {
        let (cfg, g) = setup();
        let out = debias_run(&g, &cfg, 0.1, 0.5, 1).unwrap();
        let params = train(&g, &cfg.model, 1).unwrap();
        let preds = forward(&params, &g).unwrap();
        let mut metric = cfg.metric.clone();
        metric.lambda = 0.5;
        let direct = PddReport::evaluate(&preds, &g, &g.test_nodes(), &metric).unwrap();
        assert_eq!(out.report.before, direct);
        assert!(out.report.deleted_nodes.iter().all(|&v| g.is_train(v)));
        assert_eq!(out.pruned.node_count(), g.node_count() - out.report.deleted_nodes.len());
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let (cfg, g) = setup();
        assert!(debias_run(&g, &cfg, 0.1, 1.5, 1).is_err());
        let params = train(&g, &cfg.model, 1).unwrap();
        let audit = estimate_all(&params, &g, &cfg).unwrap();
        assert!(select_harmful(&audit, &g, 1, -0.1).is_err());
    }
}
