use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    axpy, dot, norm, objective, objective_gradient, Arch, GraphContext, Input, InverseHvp, ModelSpec, NodeEval,
    Parameters,
};
use crate::config::{ModelConfig, SolverConfig, TrainingMode};
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    pub epochs: usize,
    pub polish_steps: usize,
    pub objective: f64,
    pub gradient_norm: f64,
}

impl TrainStats {
    pub fn is_stationary(&self, tolerance: f64) -> bool {
        self.gradient_norm <= tolerance
    }
}

pub fn model_spec(graph: &Graph, config: &ModelConfig) -> ModelSpec {
    ModelSpec {
        arch: config.arch,
        input_dim: graph.dim(),
        hidden: match config.arch {
            Arch::LinearSoftmax => 0,
            Arch::OneHidden => config.hidden,
        },
        classes: graph.num_classes(),
        normalization: config.normalization,
        self_loops: config.self_loops,
    }
}

/// Glorot-uniform initialization, deterministic in `seed`.
pub fn init_parameters(spec: ModelSpec, damping: f64, seed: u64) -> Parameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = Vec::with_capacity(spec.param_count());
    let mut layer = |fan_in: usize, fan_out: usize, theta: &mut Vec<f64>| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        theta.extend((0..fan_in * fan_out).map(|_| rng.random_range(-a..a)));
    };
    match spec.arch {
        Arch::LinearSoftmax => layer(spec.input_dim, spec.classes, &mut theta),
        Arch::OneHidden => {
            layer(spec.input_dim, spec.hidden, &mut theta);
            layer(spec.hidden, spec.classes, &mut theta);
        }
    }
    Parameters::new(spec, damping, theta).expect("initializer matches spec")
}

pub fn train(graph: &Graph, config: &ModelConfig, seed: u64) -> Result<Parameters> {
    train_detailed(graph, config, seed).map(|(p, _)| p)
}

/// Full-batch Adam on mean cross-entropy plus `damping/2 ‖θ‖²`, followed in
/// deterministic mode by damped Newton steps until the gradient norm falls
/// below `polish_tolerance`.
pub fn train_detailed(graph: &Graph, config: &ModelConfig, seed: u64) -> Result<(Parameters, TrainStats)> {
    let train_nodes = graph.train_nodes();
    if train_nodes.is_empty() {
        return Err(Error::InvalidGraph("empty training mask".into()));
    }
    let spec = model_spec(graph, config);
    let ctx = GraphContext::new(graph, &spec)?;
    let mut params = init_parameters(spec, config.damping, seed);
    let labels: Vec<usize> = train_nodes.iter().map(|&v| ctx.label_of(v)).collect::<Result<_>>()?;

    let dropout = config.mode == TrainingMode::Reference && config.arch == Arch::OneHidden && config.dropout > 0.0;
    let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let t = params.len();
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    let mut m1 = vec![0.0; t];
    let mut m2 = vec![0.0; t];
    let scale = 1.0 / train_nodes.len() as f64;
    let keep = 1.0 - config.dropout;

    for epoch in 1..=config.epochs {
        let mut grad = vec![0.0; t];
        let mut loss = 0.0;
        for (&v, &y) in train_nodes.iter().zip(&labels) {
            let mask: Option<Vec<f64>> = dropout.then(|| {
                (0..spec_hidden(&params))
                    .map(|_| if drop_rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect()
            });
            let eval = NodeEval::new(&params, &ctx, Input::Node(v), mask.as_deref());
            loss += scale * eval.loss(y);
            eval.backprop_loss(&params, &ctx, y, scale, &mut grad);
        }
        let objective_value = loss + 0.5 * params.damping * dot(&params.theta, &params.theta);
        if !objective_value.is_finite() {
            return Err(Error::Divergence {
                epoch,
                value: objective_value,
            });
        }
        axpy(params.damping, &params.theta, &mut grad);
        let b1 = 1.0 - beta_power(beta1, epoch);
        let b2 = 1.0 - beta_power(beta2, epoch);
        for k in 0..t {
            m1[k] = beta1 * m1[k] + (1.0 - beta1) * grad[k];
            m2[k] = beta2 * m2[k] + (1.0 - beta2) * grad[k] * grad[k];
            let step = config.learning_rate * (m1[k] / b1) / ((m2[k] / b2).sqrt() + eps);
            params.theta[k] -= step;
        }
        if params.theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                value: f64::NAN,
            });
        }
    }

    let mut polish_steps = 0;
    if config.mode == TrainingMode::Deterministic && config.polish {
        polish_steps = newton_polish(&mut params, &ctx, config)?;
    }
    let gradient = objective_gradient(&params, &ctx)?;
    let stats = TrainStats {
        epochs: config.epochs,
        polish_steps,
        objective: objective(&params, &ctx)?.total(),
        gradient_norm: norm(&gradient),
    };
    if !stats.objective.is_finite() {
        return Err(Error::Divergence {
            epoch: config.epochs,
            value: stats.objective,
        });
    }
    Ok((params, stats))
}

fn spec_hidden(params: &Parameters) -> usize {
    params.spec.hidden
}

fn beta_power(beta: f64, epoch: usize) -> f64 {
    beta.powi(epoch.min(i32::MAX as usize) as i32)
}

fn newton_polish(params: &mut Parameters, ctx: &GraphContext<'_>, config: &ModelConfig) -> Result<usize> {
    let solver = SolverConfig {
        tolerance: 1e-12,
        max_iterations: 10 * params.len() + 100,
        ..SolverConfig::default()
    };
    for step in 0..config.polish_max_steps {
        let grad = objective_gradient(params, ctx)?;
        if norm(&grad) <= config.polish_tolerance {
            return Ok(step);
        }
        let direction = match InverseHvp::new(params, ctx, &solver).and_then(|inv| inv.solve(&grad)) {
            Ok(sol) => sol.x,
            Err(Error::NonConvergence { .. }) | Err(Error::Degenerate(_)) => grad.clone(),
            Err(e) => return Err(e),
        };
        let f0 = objective(params, ctx)?.total();
        let slope = dot(&grad, &direction);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut theta = params.theta.clone();
            axpy(-alpha, &direction, &mut theta);
            let trial = params.with_theta(theta);
            let f = objective(&trial, ctx)?.total();
            if f.is_finite() && f <= f0 - 1e-4 * alpha * slope {
                *params = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // At the floating-point floor of the objective.
            return Ok(step);
        }
    }
    Ok(config.polish_max_steps)
}
