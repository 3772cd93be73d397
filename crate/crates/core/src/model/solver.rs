//! Inverse Hessian-vector products: preconditioned conjugate gradient and a
//! truncated Neumann (LiSSA-style) iteration.

use nalgebra::{DMatrix, DVector};

use super::{axpy, dot, hvp, norm, GraphContext, Parameters};
use crate::config::{SolverConfig, SolverMethod};
use crate::error::{Error, Result};

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

/// Damped training-loss Hessian of a fixed parameter point.
pub struct HessianOperator<'a, 'g> {
    pub params: &'a Parameters,
    pub ctx: &'a GraphContext<'g>,
    pub damping: f64,
}

impl<'a, 'g> HessianOperator<'a, 'g> {
    pub fn new(params: &'a Parameters, ctx: &'a GraphContext<'g>) -> Self {
        Self {
            params,
            ctx,
            damping: params.damping,
        }
    }
}

impl LinearOperator for HessianOperator<'_, '_> {
    fn dim(&self) -> usize {
        self.params.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        hvp(self.params, self.ctx, x, self.damping).expect("dimension checked by caller")
    }
}

/// Explicit symmetric matrix, mostly for tests.
pub struct DenseOperator(pub DMatrix<f64>);

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.0 * DVector::from_column_slice(x)).as_slice().to_vec()
    }
}

/// Cholesky factor of the explicitly assembled operator.
pub struct Preconditioner {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Preconditioner {
    /// Assembles the operator column by column (`dim` applications).
    pub fn assemble(op: &dyn LinearOperator) -> Result<Self> {
        let t = op.dim();
        let mut m = DMatrix::zeros(t, t);
        let mut e = vec![0.0; t];
        for k in 0..t {
            e[k] = 1.0;
            let col = op.apply(&e);
            e[k] = 0.0;
            m.set_column(k, &DVector::from_vec(col));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let chol = sym
            .cholesky()
            .ok_or_else(|| Error::Degenerate("assembled Hessian is not positive definite".into()))?;
        Ok(Self { chol })
    }

    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        self.chol.solve(&DVector::from_column_slice(r)).as_slice().to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖A x − b‖ / ‖b‖`, recomputed with a fresh operator application.
    pub residual: f64,
}

fn relative_residual(op: &dyn LinearOperator, x: &[f64], b: &[f64]) -> f64 {
    let bn = norm(b);
    if bn == 0.0 {
        return norm(&op.apply(x));
    }
    let ax = op.apply(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(a, bi)| a - bi).collect();
    norm(&r) / bn
}

pub fn conjugate_gradient(
    op: &dyn LinearOperator,
    b: &[f64],
    tolerance: f64,
    max_iterations: usize,
    precond: Option<&Preconditioner>,
) -> Result<Solution> {
    let t = op.dim();
    if b.len() != t {
        return Err(Error::DimensionMismatch { expected: t, actual: b.len() });
    }
    let bn = norm(b);
    let mut x = vec![0.0; t];
    if bn == 0.0 {
        return Ok(Solution {
            x,
            iterations: 0,
            residual: 0.0,
        });
    }
    let apply_m = |r: &[f64]| precond.map_or_else(|| r.to_vec(), |p| p.solve(r));
    let mut r = b.to_vec();
    let mut z = apply_m(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iterations {
        let ap = op.apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Degenerate("operator is not positive definite along a search direction".into()));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        if norm(&r) / bn <= tolerance {
            let residual = relative_residual(op, &x, b);
            if residual <= tolerance {
                return Ok(Solution {
                    x,
                    iterations: it,
                    residual,
                });
            }
            // Recurrence drifted; restart from the true residual.
            r = b.iter().zip(op.apply(&x)).map(|(bi, ax)| bi - ax).collect();
            z = apply_m(&r);
            p = z.clone();
            rz = dot(&r, &z);
            continue;
        }
        z = apply_m(&r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iterations,
        residual: relative_residual(op, &x, b),
    })
}

/// Largest eigenvalue of a symmetric PSD operator by power iteration.
pub fn top_eigenvalue(op: &dyn LinearOperator, iterations: usize) -> f64 {
    let t = op.dim();
    let mut v: Vec<f64> = (0..t).map(|k| 1.0 + (k as f64 * 0.618).fract()).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let w = op.apply(&v);
        lambda = dot(&v, &w);
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|x| x / nw).collect();
    }
    lambda
}

/// Truncated Neumann series for `A^-1 b`:
/// `x_{k+1} = b + (I − A/scale) x_k`, result `x_K / scale`.
pub fn lissa(op: &dyn LinearOperator, b: &[f64], iterations: usize, scale: f64, tolerance: f64) -> Result<Solution> {
    let t = op.dim();
    if b.len() != t {
        return Err(Error::DimensionMismatch { expected: t, actual: b.len() });
    }
    if scale <= 0.0 {
        return Err(Error::Config("lissa scale must be positive".into()));
    }
    let mut x = b.to_vec();
    for _ in 0..iterations {
        let ax = op.apply(&x);
        for ((xi, bi), ai) in x.iter_mut().zip(b).zip(&ax) {
            *xi = bi + *xi - ai / scale;
        }
    }
    x.iter_mut().for_each(|xi| *xi /= scale);
    let residual = relative_residual(op, &x, b);
    if residual > tolerance {
        return Err(Error::NonConvergence { iterations, residual });
    }
    Ok(Solution {
        x,
        iterations,
        residual,
    })
}

/// Reusable inverse-HVP state for one parameter point: the preconditioner
/// and the Neumann scale are computed once and shared by every solve.
pub struct InverseHvp<'a, 'g> {
    op: HessianOperator<'a, 'g>,
    config: SolverConfig,
    precond: Option<Preconditioner>,
    lissa_scale: f64,
}

impl<'a, 'g> InverseHvp<'a, 'g> {
    pub fn new(params: &'a Parameters, ctx: &'a GraphContext<'g>, config: &SolverConfig) -> Result<Self> {
        let op = HessianOperator::new(params, ctx);
        let precond = match config.method {
            SolverMethod::Cg if config.precondition && op.dim() <= config.precondition_max_dim => {
                Some(Preconditioner::assemble(&op)?)
            }
            _ => None,
        };
        let lissa_scale = match config.method {
            SolverMethod::Lissa if config.lissa_scale > 0.0 => config.lissa_scale,
            SolverMethod::Lissa => 1.05 * top_eigenvalue(&op, 100).max(params.damping),
            SolverMethod::Cg => 0.0,
        };
        Ok(Self {
            op,
            config: config.clone(),
            precond,
            lissa_scale,
        })
    }

    pub fn operator(&self) -> &HessianOperator<'a, 'g> {
        &self.op
    }

    pub fn solve(&self, b: &[f64]) -> Result<Solution> {
        match self.config.method {
            SolverMethod::Cg => conjugate_gradient(
                &self.op,
                b,
                self.config.tolerance,
                self.config.max_iterations,
                self.precond.as_ref(),
            ),
            SolverMethod::Lissa => lissa(
                &self.op,
                b,
                self.config.lissa_iterations,
                self.lissa_scale,
                self.config.tolerance,
            ),
        }
    }
}

/// One-shot `(H + damping I)^-1 b` at `params`.
pub fn inverse_hvp(params: &Parameters, ctx: &GraphContext<'_>, b: &[f64], config: &SolverConfig) -> Result<Solution> {
    InverseHvp::new(params, ctx, config)?.solve(b)
}
