//! Single-aggregation graph classifier `f_W` with closed-form loss,
//! gradient and Hessian-vector products.
//!
//! Two architectures share one flat parameter vector:
//!
//! * `linear-softmax`: `logits = Â X W`. The cross-entropy objective is
//!   convex in `W` and its Hessian is exact.
//! * `one-hidden`: `logits = Â relu(X W1) W2`. The hidden transform is applied
//!   per node before the single aggregation. Curvature uses the Gauss-Newton
//!   approximation.
//!
//! Bias terms are omitted; append a constant feature column if needed.

mod kernels;
mod solver;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Normalization, Propagation, Row};

pub use kernels::{log_softmax, softmax};
pub use solver::{
    conjugate_gradient, inverse_hvp, lissa, top_eigenvalue, DenseOperator, HessianOperator, InverseHvp,
    LinearOperator, Preconditioner, Solution,
};
pub use train::{init_parameters, model_spec, train, train_detailed, TrainStats};

pub(crate) use kernels::{Input, NodeEval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    LinearSoftmax,
    OneHidden,
}

/// Layer dimensions plus the adjacency convention the model was trained with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub normalization: Normalization,
    pub self_loops: bool,
}

impl ModelSpec {
    pub fn param_count(&self) -> usize {
        match self.arch {
            Arch::LinearSoftmax => self.input_dim * self.classes,
            Arch::OneHidden => self.input_dim * self.hidden + self.hidden * self.classes,
        }
    }

    /// Receptive field of one aggregation layer.
    pub fn hops(&self) -> usize {
        1
    }
}

pub const PARAMS_FORMAT_VERSION: u32 = 1;

/// Trained (or initial) weights as one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub version: u32,
    pub spec: ModelSpec,
    pub damping: f64,
    pub theta: Vec<f64>,
}

impl Parameters {
    pub fn new(spec: ModelSpec, damping: f64, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.param_count(),
                actual: theta.len(),
            });
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("parameters must be finite".into()));
        }
        Ok(Self {
            version: PARAMS_FORMAT_VERSION,
            spec,
            damping,
            theta,
        })
    }

    pub fn zeros(spec: ModelSpec, damping: f64) -> Self {
        let t = spec.param_count();
        Self::new(spec, damping, vec![0.0; t]).expect("zero vector has the right length")
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        assert_eq!(theta.len(), self.theta.len());
        Self {
            theta,
            ..self.clone()
        }
    }

    /// JSON artifact; floats are written in shortest round-trip form so a
    /// reload reproduces forward outputs bitwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::parse("parameters", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: Parameters = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        if params.version != PARAMS_FORMAT_VERSION {
            return Err(Error::parse(
                path.display().to_string(),
                format!("unsupported parameter format version {}", params.version),
            ));
        }
        Parameters::new(params.spec, params.damping, params.theta)
    }
}

/// Row-stochastic class probabilities and their logits, `n x c` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub classes: usize,
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.probs.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.probs[v * self.classes..(v + 1) * self.classes]
    }

    pub fn logit_row(&self, v: usize) -> &[f64] {
        &self.logits[v * self.classes..(v + 1) * self.classes]
    }

    /// Positive-class probability, the scalar of interest for binary tasks.
    pub fn positive(&self, v: usize) -> f64 {
        self.probs[v * self.classes + 1]
    }

    /// Arg-max label with ties resolved toward the lower class.
    pub fn label(&self, v: usize) -> usize {
        let row = self.row(v);
        let mut best = 0;
        for (c, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = c;
            }
        }
        best
    }
}

/// A graph paired with its normalized adjacency and cached `Â X`.
#[derive(Debug, Clone)]
pub struct GraphContext<'g> {
    graph: &'g Graph,
    prop: Propagation,
    aggregated: Vec<f64>,
}

impl<'g> GraphContext<'g> {
    pub fn new(graph: &'g Graph, spec: &ModelSpec) -> Result<Self> {
        if graph.dim() != spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: spec.input_dim,
                actual: graph.dim(),
            });
        }
        if graph.num_classes() > spec.classes {
            return Err(Error::DimensionMismatch {
                expected: spec.classes,
                actual: graph.num_classes(),
            });
        }
        let prop = Propagation::new(graph, spec.normalization, spec.self_loops)?;
        let aggregated = prop.apply(graph.features(), graph.dim());
        Ok(Self {
            graph,
            prop,
            aggregated,
        })
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn propagation(&self) -> &Propagation {
        &self.prop
    }

    pub(crate) fn aggregated(&self, v: usize) -> &[f64] {
        let d = self.graph.dim();
        &self.aggregated[v * d..(v + 1) * d]
    }

    pub(crate) fn label_of(&self, v: usize) -> Result<usize> {
        self.graph.label(v).ok_or(Error::MissingLabel(v))
    }

    pub fn predictions(&self, params: &Parameters) -> Predictions {
        let n = self.graph.node_count();
        let c = params.spec.classes;
        let mut probs = Vec::with_capacity(n * c);
        let mut logits = Vec::with_capacity(n * c);
        for v in 0..n {
            let eval = NodeEval::new(params, self, Input::Node(v), None);
            logits.extend_from_slice(&eval.logits);
            probs.extend_from_slice(&eval.probs);
        }
        Predictions { classes: c, probs, logits }
    }

    /// Cross-entropy of node `label` evaluated with the given adjacency row.
    pub fn row_loss(&self, params: &Parameters, row: &Row, label: usize) -> f64 {
        NodeEval::new(params, self, Input::Row(row), None).loss(label)
    }

    /// Cross-entropy and its gradient (accumulated as `scale * grad`).
    pub fn row_loss_grad(&self, params: &Parameters, row: &Row, label: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let eval = NodeEval::new(params, self, Input::Row(row), None);
        eval.backprop_loss(params, self, label, scale, grad);
        eval.loss(label)
    }
}

/// Probabilities for every node of `graph`.
pub fn forward(params: &Parameters, graph: &Graph) -> Result<Predictions> {
    Ok(GraphContext::new(graph, &params.spec)?.predictions(params))
}

/// Mean training cross-entropy and the damping term, reported separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub mean_loss: f64,
    pub damping_term: f64,
}

impl Objective {
    pub fn total(&self) -> f64 {
        self.mean_loss + self.damping_term
    }
}

fn check_training_subset(ctx: &GraphContext<'_>, nodes: &[usize]) -> Result<()> {
    for &v in nodes {
        ctx.graph.check_node(v)?;
        ctx.label_of(v)?;
        if !ctx.graph.is_train(v) {
            return Err(Error::NotTrainingNode(v));
        }
    }
    Ok(())
}

/// Per-node cross-entropy `L_v(G_v, W)` for each node in `nodes`.
pub fn loss_components(params: &Parameters, ctx: &GraphContext<'_>, nodes: &[usize]) -> Result<Vec<f64>> {
    check_training_subset(ctx, nodes)?;
    nodes
        .iter()
        .map(|&v| Ok(NodeEval::new(params, ctx, Input::Node(v), None).loss(ctx.label_of(v)?)))
        .collect()
}

pub fn objective(params: &Parameters, ctx: &GraphContext<'_>) -> Result<Objective> {
    let train = ctx.graph.train_nodes();
    if train.is_empty() {
        return Err(Error::InvalidGraph("empty training mask".into()));
    }
    let losses = loss_components(params, ctx, &train)?;
    Ok(Objective {
        mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
        damping_term: 0.5 * params.damping * dot(&params.theta, &params.theta),
    })
}

/// Gradient of the unweighted loss of a single training node.
pub fn node_gradient(params: &Parameters, ctx: &GraphContext<'_>, v: usize) -> Result<Vec<f64>> {
    check_training_subset(ctx, &[v])?;
    let mut grad = vec![0.0; params.len()];
    let eval = NodeEval::new(params, ctx, Input::Node(v), None);
    eval.backprop_loss(params, ctx, ctx.label_of(v)?, 1.0, &mut grad);
    Ok(grad)
}

/// Gradient of the mean cross-entropy over `nodes` (no damping).
pub fn mean_loss_gradient(params: &Parameters, ctx: &GraphContext<'_>, nodes: &[usize]) -> Result<Vec<f64>> {
    check_training_subset(ctx, nodes)?;
    let mut grad = vec![0.0; params.len()];
    let scale = 1.0 / nodes.len().max(1) as f64;
    for &v in nodes {
        let eval = NodeEval::new(params, ctx, Input::Node(v), None);
        eval.backprop_loss(params, ctx, ctx.label_of(v)?, scale, &mut grad);
    }
    Ok(grad)
}

/// Gradient of the full training objective: mean loss plus damping.
pub fn objective_gradient(params: &Parameters, ctx: &GraphContext<'_>) -> Result<Vec<f64>> {
    let mut grad = mean_loss_gradient(params, ctx, &ctx.graph.train_nodes())?;
    axpy(params.damping, &params.theta, &mut grad);
    Ok(grad)
}

/// `(∇² L_train + damping I) v`; exact for the linear arch, Gauss-Newton
/// for the hidden arch.
pub fn hvp(params: &Parameters, ctx: &GraphContext<'_>, v: &[f64], damping: f64) -> Result<Vec<f64>> {
    if v.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: v.len(),
        });
    }
    let train = ctx.graph.train_nodes();
    let scale = 1.0 / train.len().max(1) as f64;
    let mut out = vec![0.0; v.len()];
    for &node in &train {
        NodeEval::new(params, ctx, Input::Node(node), None).gauss_newton_product(params, ctx, v, scale, &mut out);
    }
    axpy(damping, v, &mut out);
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::graph::Masks;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ARCHES: [Arch; 2] = [Arch::LinearSoftmax, Arch::OneHidden];

    fn fd_gradient_check(params: &Parameters, ctx: &GraphContext<'_>, f: impl Fn(&Parameters) -> f64, grad: &[f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let k = rng.random_range(0..params.len());
            let h = 1e-5 * (1.0 + params.theta[k].abs());
            let mut plus = params.theta.clone();
            plus[k] += h;
            let mut minus = params.theta.clone();
            minus[k] -= h;
            let fd = (f(&params.with_theta(plus)) - f(&params.with_theta(minus))) / (2.0 * h);
            let err = (fd - grad[k]).abs() / grad[k].abs().max(1e-3);
            assert!(err <= 1e-6, "coord {k}: fd {fd} vs analytic {} (rel {err})", grad[k]);
        }
        let _ = ctx;
    }

    #[test]
    fn zero_parameters_give_uniform_rows() {
        for arch in ARCHES {
            let g = random_graph(10, 3, 3, 1);
            let p = Parameters::zeros(spec(arch, 3, 3), 0.01);
            let preds = forward(&p, &g).unwrap();
            for v in 0..10 {
                for &q in preds.row(v) {
                    assert!((q - 1.0 / 3.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn single_self_looped_node_returns_weight_row() {
        let g = Graph::new(1, [], vec![1.0, 0.0], 2, vec![Some(0)], vec![0]).unwrap();
        let p = Parameters::new(spec(Arch::LinearSoftmax, 2, 2), 0.01, vec![0.3, -0.7, 1.0, 2.0]).unwrap();
        let preds = forward(&p, &g).unwrap();
        assert_eq!(preds.logit_row(0), &[0.3, -0.7]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = random_graph(6, 3, 2, 1);
        let p = Parameters::zeros(spec(Arch::LinearSoftmax, 4, 2), 0.01);
        assert!(matches!(forward(&p, &g), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn prediction_depends_only_on_one_hop_ball() {
        let g = random_graph(30, 3, 2, 4);
        let p = random_params(spec(Arch::OneHidden, 3, 2), 2);
        let base = forward(&p, &g).unwrap();
        let v = 7;
        let ball = g.ball(v, 1);
        for u in (0..30).filter(|u| !ball.contains(u)) {
            let mut x = g.features().to_vec();
            for k in 0..3 {
                x[u * 3 + k] += 10.0;
            }
            let g2 = Graph::new(30, g.edges().to_vec(), x, 3, g.labels().to_vec(), g.sensitive().to_vec()).unwrap();
            assert_eq!(forward(&p, &g2).unwrap().row(v), base.row(v));
        }
        // Perturbing a ball member does move the prediction.
        let u = *ball.iter().find(|&&u| u != v).unwrap();
        let mut x = g.features().to_vec();
        x[u * 3] += 10.0;
        let g2 = Graph::new(30, g.edges().to_vec(), x, 3, g.labels().to_vec(), g.sensitive().to_vec()).unwrap();
        assert_ne!(forward(&p, &g2).unwrap().row(v), base.row(v));
    }

    #[test]
    fn probabilities_are_on_the_simplex() {
        let g = random_graph(20, 4, 3, 5);
        let mut p = random_params(spec(Arch::LinearSoftmax, 4, 3), 3);
        for x in &mut p.theta {
            *x *= 300.0;
        }
        let preds = forward(&p, &g).unwrap();
        for v in 0..20 {
            let s: f64 = preds.row(v).iter().sum();
            assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn loss_reference_values() {
        let g = random_graph(9, 2, 2, 1);
        let ctx = GraphContext::new(&g, &spec(Arch::LinearSoftmax, 2, 2)).unwrap();
        let p = Parameters::zeros(spec(Arch::LinearSoftmax, 2, 2), 0.01);
        let train = g.train_nodes();
        for l in loss_components(&p, &ctx, &train).unwrap() {
            assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        }
        assert!(matches!(loss_components(&p, &ctx, &[0]), Err(Error::NotTrainingNode(0))));
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let g = Graph::new(1, [], vec![1.0], 1, vec![Some(1)], vec![0])
            .unwrap()
            .with_masks(Masks::from_lists(1, &[0], &[], &[]).unwrap())
            .unwrap();
        let p = Parameters::new(spec(Arch::LinearSoftmax, 1, 2), 0.01, vec![-40.0, 40.0]).unwrap();
        let ctx = GraphContext::new(&g, &p.spec).unwrap();
        assert!(loss_components(&p, &ctx, &[0]).unwrap()[0] < 1e-30);
    }

    #[test]
    fn mean_of_components_is_objective_minus_damping() {
        let g = random_graph(15, 3, 2, 8);
        let p = random_params(spec(Arch::OneHidden, 3, 2), 8);
        let ctx = GraphContext::new(&g, &p.spec).unwrap();
        let comps = loss_components(&p, &ctx, &g.train_nodes()).unwrap();
        let obj = objective(&p, &ctx).unwrap();
        let mean = comps.iter().sum::<f64>() / comps.len() as f64;
        assert!((obj.total() - obj.damping_term - mean).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_central_differences() {
        for arch in ARCHES {
            let g = random_graph(25, 4, 3, 21);
            let p = random_params(spec(arch, 4, 3), 5);
            let ctx = GraphContext::new(&g, &p.spec).unwrap();
            let grad = objective_gradient(&p, &ctx).unwrap();
            fd_gradient_check(&p, &ctx, |q| objective(q, &ctx).unwrap().total(), &grad);
            let v = g.train_nodes()[3];
            let grad = node_gradient(&p, &ctx, v).unwrap();
            fd_gradient_check(&p, &ctx, |q| loss_components(q, &ctx, &[v]).unwrap()[0], &grad);
        }
    }

    #[test]
    fn damping_only_objective_gradient() {
        let g = random_graph(9, 2, 2, 3);
        let p = random_params(spec(Arch::LinearSoftmax, 2, 2), 1);
        let ctx = GraphContext::new(&g, &p.spec).unwrap();
        let full = objective_gradient(&p, &ctx).unwrap();
        let data = mean_loss_gradient(&p, &ctx, &g.train_nodes()).unwrap();
        for k in 0..p.len() {
            assert!((full[k] - data[k] - p.damping * p.theta[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn singleton_gradients_sum_to_m_times_data_gradient() {
        let g = random_graph(18, 3, 2, 6);
        let p = random_params(spec(Arch::OneHidden, 3, 2), 6);
        let ctx = GraphContext::new(&g, &p.spec).unwrap();
        let train = g.train_nodes();
        let m = train.len() as f64;
        let mut sum = vec![0.0; p.len()];
        for &v in &train {
            axpy(1.0, &node_gradient(&p, &ctx, v).unwrap(), &mut sum);
        }
        let full = objective_gradient(&p, &ctx).unwrap();
        for k in 0..p.len() {
            let expect = m * (full[k] - p.damping * p.theta[k]);
            assert!((sum[k] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn hvp_matches_gradient_differences_for_linear_arch() {
        let g = random_graph(25, 4, 3, 2);
        let p = random_params(spec(Arch::LinearSoftmax, 4, 3), 9);
        let ctx = GraphContext::new(&g, &p.spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dir: Vec<f64> = (0..p.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hv = hvp(&p, &ctx, &dir, p.damping).unwrap();
        let h = 1e-5;
        let shifted = |s: f64| {
            let mut t = p.theta.clone();
            axpy(s * h, &dir, &mut t);
            objective_gradient(&p.with_theta(t), &ctx).unwrap()
        };
        let (gp, gm) = (shifted(1.0), shifted(-1.0));
        let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let diff: Vec<f64> = fd.iter().zip(&hv).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) / norm(&hv) <= 1e-4);
    }

    #[test]
    fn hvp_is_linear_symmetric_and_damped() {
        let g = random_graph(20, 3, 2, 12);
        let p = random_params(spec(Arch::LinearSoftmax, 3, 2), 4);
        let ctx = GraphContext::new(&g, &p.spec).unwrap();
        assert!(hvp(&p, &ctx, &vec![0.0; p.len()], p.damping).unwrap().iter().all(|&x| x == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let u: Vec<f64> = (0..p.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..p.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hu = hvp(&p, &ctx, &u, p.damping).unwrap();
            let hv = hvp(&p, &ctx, &v, p.damping).unwrap();
            assert!((dot(&u, &hv) - dot(&v, &hu)).abs() <= 1e-8);
            assert!(dot(&v, &hv) >= p.damping * dot(&v, &v) - 1e-15);
        }
        assert!(matches!(hvp(&p, &ctx, &[1.0], 0.1), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn damping_only_hessian_is_scaled_identity() {
        // No training nodes carry curvature once the data term is removed:
        // emulate with a graph whose only training node sits at a zero input.
        let g = Graph::new(2, [], vec![0.0, 0.0], 1, vec![Some(0), Some(1)], vec![0, 1])
            .unwrap()
            .with_masks(Masks::from_lists(2, &[0, 1], &[], &[]).unwrap())
            .unwrap();
        let p = random_params(spec(Arch::LinearSoftmax, 1, 2), 1);
        let ctx = GraphContext::new(&g, &p.spec).unwrap();
        let v = vec![0.5, -2.0];
        let hv = hvp(&p, &ctx, &v, 0.3).unwrap();
        assert!((hv[0] - 0.15).abs() < 1e-15 && (hv[1] + 0.6).abs() < 1e-15);
    }

    #[test]
    fn saved_parameters_reproduce_forward_bitwise() {
        let g = random_graph(12, 3, 2, 4);
        let p = random_params(spec(Arch::OneHidden, 3, 2), 77);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        p.save(&path).unwrap();
        let q = Parameters::load(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(forward(&p, &g).unwrap(), forward(&q, &g).unwrap());
    }
}
