//! Wasserstein-1 between uniform empirical distributions.

use serde::Serialize;

use crate::error::{Error, Result};

/// Uniformly weighted point cloud in `R^k`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    dim: usize,
    points: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::EmptyDistribution(format!("{} values for dimension {dim}", points.len())));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::Degenerate("non-finite sample".into()));
        }
        Ok(Self { dim, points })
    }

    /// One-dimensional samples, e.g. positive-class probabilities.
    pub fn from_scalars(samples: &[f64]) -> Result<Self> {
        Self::new(1, samples.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn scalars(&self) -> &[f64] {
        &self.points
    }
}

/// Exact 1-D W1 by integrating `|F_a^-1(u) − F_b^-1(u)|` over the merged
/// quantile breakpoints.
pub fn wasserstein1_1d(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Result<f64> {
    if a.dim() != 1 || b.dim() != 1 {
        return Err(Error::Config("wasserstein1_1d needs scalar samples".into()));
    }
    let ids_a: Vec<usize> = (0..a.len()).collect();
    let ids_b: Vec<usize> = (0..b.len()).collect();
    Ok(quantile_matching(a.scalars(), &ids_a, b.scalars(), &ids_b).value)
}

/// Optimal 1-D coupling held fixed, with its subgradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub value: f64,
    /// `∂W1/∂a_k` in the input order of `a`.
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

fn sorted_order(values: &[f64], ids: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&x, &y| values[x].total_cmp(&values[y]).then(ids[x].cmp(&ids[y])));
    order
}

/// Monotone quantile coupling of two uniform samples. Ties in value are
/// ordered by `ids`, so the subgradient is deterministic.
pub fn quantile_matching(a: &[f64], ids_a: &[usize], b: &[f64], ids_b: &[usize]) -> Matching {
    let (n, m) = (a.len(), b.len());
    let oa = sorted_order(a, ids_a);
    let ob = sorted_order(b, ids_b);
    let mut grad_a = vec![0.0; n];
    let mut grad_b = vec![0.0; m];
    let mut value = 0.0;
    // Positions on [0, 1] measured in units of 1 / (n m).
    let total = (n * m) as f64;
    let (mut i, mut j, mut cur) = (0usize, 0usize, 0usize);
    while i < n && j < m {
        let next_a = (i + 1) * m;
        let next_b = (j + 1) * n;
        let next = next_a.min(next_b);
        let w = (next - cur) as f64 / total;
        let diff = a[oa[i]] - b[ob[j]];
        value += w * diff.abs();
        let s = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad_a[oa[i]] += w * s;
        grad_b[ob[j]] -= w * s;
        cur = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    Matching { value, grad_a, grad_b }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkhornResult {
    /// `<plan, cost>`.
    pub distance: f64,
    /// `n x m` row-major transport plan with marginals `1/n`, `1/m`.
    pub plan: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub iterations: usize,
    pub marginal_error: f64,
}

impl SinkhornResult {
    pub fn plan_at(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols + j]
    }
}

pub const SINKHORN_MARGINAL_TOLERANCE: f64 = 1e-6;


fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic OT with `‖x − y‖₁` cost, computed with log-domain updates and
/// geometric annealing of the regularization down to `reg`. `iters` bounds
/// the updates at each annealing stage; marginal error is the largest
/// per-row deviation after the column update.
pub fn sinkhorn_w1(a: &EmpiricalDistribution, b: &EmpiricalDistribution, reg: f64, iters: usize) -> Result<SinkhornResult> {
    if reg <= 0.0 || !reg.is_finite() {
        return Err(Error::Config("sinkhorn regularization must be positive".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (n, m) = (a.len(), b.len());
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| a.point(i).iter().zip(b.point(j)).map(|(x, y)| (x - y).abs()).sum())
        .collect();
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    let update = |eps: f64, f: &mut [f64], g: &mut [f64]| {
        for i in 0..n {
            let row = (0..m).map(|j| (g[j] - cost[i * m + j]) / eps);
            f[i] = eps * (log_a - log_sum_exp(row));
        }
        for j in 0..m {
            let col = (0..n).map(|i| (f[i] - cost[i * m + j]) / eps);
            g[j] = eps * (log_b - log_sum_exp(col));
        }
    };
    let row_error = |eps: f64, f: &[f64], g: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                let mass: f64 = (0..m).map(|j| ((f[i] + g[j] - cost[i * m + j]) / eps).exp()).sum();
                (mass - 1.0 / n as f64).abs()
            })
            .fold(0.0, f64::max)
    };

    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    let mut eps = max_cost.max(reg);
    let mut iterations = 0;
    while eps > reg {
        for _ in 0..iters.max(1) {
            update(eps, &mut f, &mut g);
            iterations += 1;
            if row_error(eps, &f, &g) <= SINKHORN_MARGINAL_TOLERANCE {
                break;
            }
        }
        eps = (eps * 0.5).max(reg);
    }
    let mut error = f64::INFINITY;
    for _ in 0..iters.max(1) {
        update(reg, &mut f, &mut g);
        iterations += 1;
        error = row_error(reg, &f, &g);
        if error <= SINKHORN_MARGINAL_TOLERANCE {
            break;
        }
    }
    if error > ROUNDING_THRESHOLD / n as f64 {
        return Err(Error::SinkhornNonConvergence { iterations, error });
    }
    let mut plan: Vec<f64> = (0..n * m)
        .map(|k| ((f[k / m] + g[k % m] - cost[k]) / reg).exp())
        .collect();
    if error > SINKHORN_MARGINAL_TOLERANCE {
        round_to_marginals(&mut plan, n, m);
        error = max_marginal_error(&plan, n, m);
    }
    let distance = plan.iter().zip(&cost).map(|(p, c)| p * c).sum();
    Ok(SinkhornResult {
        distance,
        plan,
        rows: n,
        cols: m,
        iterations,
        marginal_error: error,
    })
}

/// Largest relative per-row deviation at which a stalled plan is still
/// projected onto the exact marginals instead of being rejected.
const ROUNDING_THRESHOLD: f64 = 1e-2;

fn max_marginal_error(plan: &[f64], n: usize, m: usize) -> f64 {
    let rows = (0..n).map(|i| (plan[i * m..(i + 1) * m].iter().sum::<f64>() - 1.0 / n as f64).abs());
    let cols = (0..m).map(|j| ((0..n).map(|i| plan[i * m + j]).sum::<f64>() - 1.0 / m as f64).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Projects a nonnegative plan onto the uniform transport polytope: shrink
/// overfull rows and columns, then redistribute the deficit as a rank-one
/// correction.
fn round_to_marginals(plan: &mut [f64], n: usize, m: usize) {
    let (r, c) = (1.0 / n as f64, 1.0 / m as f64);
    for i in 0..n {
        let mass: f64 = plan[i * m..(i + 1) * m].iter().sum();
        if mass > r {
            plan[i * m..(i + 1) * m].iter_mut().for_each(|p| *p *= r / mass);
        }
    }
    for j in 0..m {
        let mass: f64 = (0..n).map(|i| plan[i * m + j]).sum();
        if mass > c {
            (0..n).for_each(|i| plan[i * m + j] *= c / mass);
        }
    }
    let dr: Vec<f64> = (0..n).map(|i| r - plan[i * m..(i + 1) * m].iter().sum::<f64>()).collect();
    let dc: Vec<f64> = (0..m).map(|j| c - (0..n).map(|i| plan[i * m + j]).sum::<f64>()).collect();
    let total: f64 = dr.iter().sum();
    if total > 0.0 {
        for i in 0..n {
            for j in 0..m {
                plan[i * m + j] += dr[i] * dc[j] / total;
            }
        }
    }
}

/// Envelope gradient of `<plan, cost>` with the plan held fixed:
/// `∂/∂a_i = Σ_j P_ij sign(a_i − b_j)` per coordinate.
pub fn sinkhorn_point_gradients(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    result: &SinkhornResult,
) -> (Vec<f64>, Vec<f64>) {
    let k = a.dim();
    let mut ga = vec![0.0; a.len() * k];
    let mut gb = vec![0.0; b.len() * k];
    for i in 0..a.len() {
        for j in 0..b.len() {
            let p = result.plan_at(i, j);
            for (c, (x, y)) in a.point(i).iter().zip(b.point(j)).enumerate() {
                let s = (x - y).signum() * ((x - y) != 0.0) as u8 as f64;
                ga[i * k + c] += p * s;
                gb[j * k + c] -= p * s;
            }
        }
    }
    (ga, gb)
}
