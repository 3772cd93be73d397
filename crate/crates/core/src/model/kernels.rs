use std::borrow::Cow;

use super::{Arch, GraphContext, Parameters};

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Where a node's adjacency row comes from.
#[derive(Clone, Copy)]
pub(crate) enum Input<'a> {
    /// Row of the context's own `Â`.
    Node(usize),
    /// An explicit row, e.g. of `Â` with some node deleted.
    Row(&'a [(usize, f64)]),
}

/// Forward pass of one node with the intermediates backprop needs.
pub(crate) struct NodeEval<'a> {
    row: Cow<'a, [(usize, f64)]>,
    /// Aggregated input (linear) or aggregated hidden activation (hidden).
    agg: Cow<'a, [f64]>,
    /// Hidden arch: per-neighbour pre-activations, row order.
    pre: Vec<Vec<f64>>,
    dropout: Option<&'a [f64]>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl<'a> NodeEval<'a> {
    pub fn new(params: &Parameters, ctx: &'a GraphContext<'_>, input: Input<'a>, dropout: Option<&'a [f64]>) -> Self {
        let spec = &params.spec;
        let (d, h, c) = (spec.input_dim, spec.hidden, spec.classes);
        let graph = ctx.graph();
        let row: Cow<'a, [(usize, f64)]> = match input {
            Input::Node(v) => Cow::Borrowed(ctx.propagation().row(v)),
            Input::Row(r) => Cow::Borrowed(r),
        };
        match spec.arch {
            Arch::LinearSoftmax => {
                let agg: Cow<'a, [f64]> = match input {
                    Input::Node(v) => Cow::Borrowed(ctx.aggregated(v)),
                    Input::Row(r) => {
                        let mut z = vec![0.0; d];
                        for &(k, w) in r {
                            for (zi, xi) in z.iter_mut().zip(graph.feature_row(k)) {
                                *zi += w * xi;
                            }
                        }
                        Cow::Owned(z)
                    }
                };
                let w = &params.theta;
                let mut logits = vec![0.0; c];
                for (i, &zi) in agg.iter().enumerate() {
                    for (o, l) in logits.iter_mut().enumerate() {
                        *l += zi * w[i * c + o];
                    }
                }
                let probs = softmax(&logits);
                Self {
                    row,
                    agg,
                    pre: Vec::new(),
                    dropout,
                    logits,
                    probs,
                }
            }
            Arch::OneHidden => {
                let (w1, w2) = params.theta.split_at(d * h);
                let mut pre = Vec::with_capacity(row.len());
                let mut agg = vec![0.0; h];
                for &(k, wk) in row.iter() {
                    let x = graph.feature_row(k);
                    let mut p = vec![0.0; h];
                    for (i, &xi) in x.iter().enumerate() {
                        for (j, pj) in p.iter_mut().enumerate() {
                            *pj += xi * w1[i * h + j];
                        }
                    }
                    for (a, &pj) in agg.iter_mut().zip(&p) {
                        *a += wk * pj.max(0.0);
                    }
                    pre.push(p);
                }
                if let Some(mask) = dropout {
                    for (a, m) in agg.iter_mut().zip(mask) {
                        *a *= m;
                    }
                }
                let mut logits = vec![0.0; c];
                for (j, &aj) in agg.iter().enumerate() {
                    for (o, l) in logits.iter_mut().enumerate() {
                        *l += aj * w2[j * c + o];
                    }
                }
                let probs = softmax(&logits);
                Self {
                    row,
                    agg: Cow::Owned(agg),
                    pre,
                    dropout,
                    logits,
                    probs,
                }
            }
        }
    }

    pub fn loss(&self, label: usize) -> f64 {
        -log_softmax(&self.logits)[label]
    }

    /// Accumulates `scale * J^T dlogits` into `grad`.
    pub fn backprop_logits(&self, params: &Parameters, ctx: &GraphContext<'_>, dlogits: &[f64], scale: f64, grad: &mut [f64]) {
        let spec = &params.spec;
        let (d, h, c) = (spec.input_dim, spec.hidden, spec.classes);
        match spec.arch {
            Arch::LinearSoftmax => {
                for (i, &zi) in self.agg.iter().enumerate() {
                    let s = scale * zi;
                    for (o, &g) in dlogits.iter().enumerate() {
                        grad[i * c + o] += s * g;
                    }
                }
            }
            Arch::OneHidden => {
                let w2 = &params.theta[d * h..];
                let (g1, g2) = grad.split_at_mut(d * h);
                let mut dagg = vec![0.0; h];
                for (j, &aj) in self.agg.iter().enumerate() {
                    for (o, &g) in dlogits.iter().enumerate() {
                        g2[j * c + o] += scale * aj * g;
                        dagg[j] += w2[j * c + o] * g;
                    }
                }
                if let Some(mask) = self.dropout {
                    for (g, m) in dagg.iter_mut().zip(mask) {
                        *g *= m;
                    }
                }
                for (&(k, wk), pre) in self.row.iter().zip(&self.pre) {
                    let x = ctx.graph().feature_row(k);
                    for (j, &pj) in pre.iter().enumerate() {
                        if pj <= 0.0 {
                            continue;
                        }
                        let gj = scale * wk * dagg[j];
                        for (i, &xi) in x.iter().enumerate() {
                            g1[i * h + j] += xi * gj;
                        }
                    }
                }
            }
        }
    }

    pub fn backprop_loss(&self, params: &Parameters, ctx: &GraphContext<'_>, label: usize, scale: f64, grad: &mut [f64]) {
        let mut dlogits = self.probs.clone();
        dlogits[label] -= 1.0;
        self.backprop_logits(params, ctx, &dlogits, scale, grad);
    }

    /// Directional derivative of the logits, `J v`.
    pub fn jvp(&self, params: &Parameters, ctx: &GraphContext<'_>, v: &[f64]) -> Vec<f64> {
        let spec = &params.spec;
        let (d, h, c) = (spec.input_dim, spec.hidden, spec.classes);
        let mut out = vec![0.0; c];
        match spec.arch {
            Arch::LinearSoftmax => {
                for (i, &zi) in self.agg.iter().enumerate() {
                    for (o, l) in out.iter_mut().enumerate() {
                        *l += zi * v[i * c + o];
                    }
                }
            }
            Arch::OneHidden => {
                let w2 = &params.theta[d * h..];
                let (v1, v2) = v.split_at(d * h);
                let mut dagg = vec![0.0; h];
                for (&(k, wk), pre) in self.row.iter().zip(&self.pre) {
                    let x = ctx.graph().feature_row(k);
                    for (j, &pj) in pre.iter().enumerate() {
                        if pj <= 0.0 {
                            continue;
                        }
                        let dp: f64 = x.iter().enumerate().map(|(i, &xi)| xi * v1[i * h + j]).sum();
                        dagg[j] += wk * dp;
                    }
                }
                if let Some(mask) = self.dropout {
                    for (g, m) in dagg.iter_mut().zip(mask) {
                        *g *= m;
                    }
                }
                for j in 0..h {
                    for (o, l) in out.iter_mut().enumerate() {
                        *l += dagg[j] * w2[j * c + o] + self.agg[j] * v2[j * c + o];
                    }
                }
            }
        }
        out
    }

    /// Accumulates `scale * J^T (diag(p) - p p^T) J v`.
    pub fn gauss_newton_product(&self, params: &Parameters, ctx: &GraphContext<'_>, v: &[f64], scale: f64, out: &mut [f64]) {
        let jv = self.jvp(params, ctx, v);
        let pjv: f64 = self.probs.iter().zip(&jv).map(|(p, x)| p * x).sum();
        let hjv: Vec<f64> = self.probs.iter().zip(&jv).map(|(p, x)| p * (x - pjv)).collect();
        self.backprop_logits(params, ctx, &hjv, scale, out);
    }

    /// Accumulates `scale * (dp/dθ)^T dprobs`.
    pub fn backprop_probs(&self, params: &Parameters, ctx: &GraphContext<'_>, dprobs: &[f64], scale: f64, grad: &mut [f64]) {
        let pg: f64 = self.probs.iter().zip(dprobs).map(|(p, g)| p * g).sum();
        let dlogits: Vec<f64> = self.probs.iter().zip(dprobs).map(|(p, g)| p * (g - pg)).collect();
        self.backprop_logits(params, ctx, &dlogits, scale, grad);
    }
}
