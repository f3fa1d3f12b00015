use crate::error::{Error, Result};
use crate::sparse_solver::{dot, norm};

/// Symmetric positive definite operator accessed through products only.
pub trait SymOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Preconditioner {
    #[default]
    Jacobi,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgConfig {
    pub rel_tol: f64,
    /// `None` means `10 · dim`.
    pub max_iter: Option<usize>,
    pub preconditioner: Preconditioner,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-8, max_iter: None, preconditioner: Preconditioner::Jacobi }
    }
}

impl CgConfig {
    pub fn with_tol(rel_tol: f64) -> Self {
        Self { rel_tol, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iters: usize,
    /// `‖b − A x‖ / ‖b‖`, recomputed from scratch for the returned `x`.
    pub rel_residual: f64,
}

/// Residual is recomputed as `b − A x` every this many iterations.
const RESIDUAL_REFRESH: usize = 50;

fn residual(op: &impl SymOperator, b: &[f64], x: &[f64], scratch: &mut [f64]) -> Vec<f64> {
    op.apply(x, scratch);
    b.iter().zip(scratch.iter()).map(|(bi, ai)| bi - ai).collect()
}

/// Preconditioned conjugate gradient for `A x = b` starting from `x = 0`.
///
/// Jacobi preconditioning is the symmetric diagonal scaling
/// `D^{-1/2} A D^{-1/2}`, run in its equivalent PCG form. An accepted solution
/// always satisfies `‖b − A x‖ ≤ rel_tol ‖b‖` with the residual computed
/// directly.
pub fn cg_solve(op: &impl SymOperator, b: &[f64], cfg: &CgConfig) -> Result<CgOutcome> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!("rhs has length {}, operator {}", b.len(), n)));
    }
    if !(cfg.rel_tol > 0.0) {
        return Err(Error::InvalidInput(format!("rel_tol must be positive, got {}", cfg.rel_tol)));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cg right-hand side"));
    }
    let max_iter = cfg.max_iter.unwrap_or(10 * n.max(1));
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(CgOutcome { x: vec![0.0; n], iters: 0, rel_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = match cfg.preconditioner {
        Preconditioner::Jacobi => op
            .diagonal()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect(),
        Preconditioner::None => vec![1.0; n],
    };
    let precondition = |r: &[f64]| -> Vec<f64> { r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect() };

    let mut x = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 1..=max_iter {
        op.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !pq.is_finite() {
            return Err(Error::NonFinite("cg iteration"));
        }
        if pq <= 0.0 {
            return Err(Error::InvalidInput("operator is not positive definite".into()));
        }
        let alpha = rz / pq;
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += alpha * pi;
        }
        if it % RESIDUAL_REFRESH == 0 {
            r = residual(op, b, &x, &mut q);
        } else {
            for (ri, qi) in r.iter_mut().zip(&q) {
                *ri -= alpha * qi;
            }
        }
        rel = norm(&r) / bnorm;
        if !rel.is_finite() {
            return Err(Error::NonFinite("cg residual"));
        }
        if rel <= cfg.rel_tol {
            r = residual(op, b, &x, &mut q);
            rel = norm(&r) / bnorm;
            if rel <= cfg.rel_tol {
                return Ok(CgOutcome { x, iters: it, rel_residual: rel });
            }
            // recursive residual drifted; restart from the true one
            z = precondition(&r);
            rz = dot(&r, &z);
            p.copy_from_slice(&z);
            continue;
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::NonConvergence { iters: max_iter, residual: rel })
}
