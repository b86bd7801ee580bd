//! Conjugate gradient on a symmetric positive-definite operator, one
//! right-hand side column at a time.

use nalgebra::DMatrix;

use super::CgConfig;
use crate::error::{Error, Result};

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;
}

/// Dense matrix as an operator (oracles and tests).
pub struct DenseOperator(pub DMatrix<f64>);

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok((&self.0 * nalgebra::DVector::from_column_slice(v)).iter().copied().collect())
    }
}

/// `op + λI`.
pub struct Damped<'a, O: ?Sized> {
    pub op: &'a O,
    pub damping: f64,
}

impl<O: LinearOperator + ?Sized> LinearOperator for Damped<'_, O> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.op.apply(v)?;
        for (o, x) in out.iter_mut().zip(v) {
            *o += self.damping * x;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub z: DMatrix<f64>,
    /// Iterations used per column.
    pub iterations: Vec<usize>,
    /// Final relative residual `‖Az − b‖/‖b‖` per column.
    pub residuals: Vec<f64>,
}

impl CgSolution {
    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A z = b` from `z = 0`. Returns `(z, iterations, relative residual,
/// converged)`.
fn solve_column(op: &dyn LinearOperator, b: &[f64], cfg: &CgConfig) -> Result<(Vec<f64>, usize, f64, bool)> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0, 0.0, true));
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 1..=cfg.max_iters {
        let ap = op.apply(&p)?;
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::IndefiniteCurvature { curvature });
        }
        let a = rr / curvature;
        for k in 0..n {
            x[k] += a * p[k];
            r[k] -= a * ap[k];
        }
        let rr_new = dot(&r, &r);
        let rel = rr_new.sqrt() / bnorm;
        if rel <= cfg.residual_tol {
            return Ok((x, it, rel, true));
        }
        let beta = rr_new / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    Ok((x, cfg.max_iters, rr.sqrt() / bnorm, false))
}

/// Column-wise CG for `A Z = B`. The operator is used as given; damping is
/// the caller's responsibility (see [`Damped`]).
pub fn cg_solve_operator(op: &dyn LinearOperator, rhs: &DMatrix<f64>, cfg: &CgConfig) -> Result<CgSolution> {
    cfg.validate()?;
    if rhs.nrows() != op.dim() {
        return Err(Error::DimensionMismatch(format!(
            "operator has dimension {}, right-hand side has {} rows",
            op.dim(),
            rhs.nrows()
        )));
    }
    if !rhs.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("right-hand side is not finite".into()));
    }
    let mut z = DMatrix::zeros(rhs.nrows(), rhs.ncols());
    let mut iterations = Vec::with_capacity(rhs.ncols());
    let mut residuals = Vec::with_capacity(rhs.ncols());
    let mut all = true;
    for c in 0..rhs.ncols() {
        let b: Vec<f64> = rhs.column(c).iter().copied().collect();
        let (x, it, res, ok) = solve_column(op, &b, cfg)?;
        z.set_column(c, &nalgebra::DVector::from_vec(x));
        iterations.push(it);
        residuals.push(res);
        all &= ok;
    }
    if !all {
        let worst = residuals.iter().copied().fold(0.0, f64::max);
        return Err(Error::CgNonConvergence {
            iterations: cfg.max_iters,
            worst_residual: worst,
            residuals,
            partial: z.column_iter().map(|c| c.iter().copied().collect()).collect(),
        });
    }
    Ok(CgSolution { z, iterations, residuals })
}
