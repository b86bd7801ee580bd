//! Dense reference path: materialize the masked Hessian, factorize, solve.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{assemble, check_space, check_targets, label_coupling, CgConfig, GlsMatrix, HessianOperator, LayerMask, LinearOperator, Space};
use crate::dataset::Dataset;
use crate::diff_models::{DiffModel, LossKind};
use crate::error::{Error, Result};

pub const DENSE_LIMIT: usize = 2000;
/// Smallest accepted `|λ_min| / |λ_max|` of the damped Hessian.
pub const SINGULAR_RATIO: f64 = 1e-14;

/// `H_sub + λI` built column by column from Hessian-vector products, then
/// symmetrized.
pub fn dense_hessian(model: &DiffModel, loss: LossKind, data: &Dataset, mask: &LayerMask, cfg: &CgConfig) -> Result<DMatrix<f64>> {
    let op = HessianOperator::new(model, loss, data, mask, cfg)?;
    let p = op.dim();
    if p > DENSE_LIMIT {
        return Err(Error::FeasibilityGuard { size: p, limit: DENSE_LIMIT });
    }
    let cols: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|k| {
            let mut e = vec![0.0; p];
            e[k] = 1.0;
            op.apply(&e)
        })
        .collect::<Result<_>>()?;
    let h = DMatrix::from_fn(p, p, |r, c| cols[c][r]);
    Ok((&h + h.transpose()) * 0.5)
}

/// Solves `H Z = B`, by Cholesky when `H` is positive definite and LU
/// otherwise.
pub(crate) fn dense_solve(h: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = h.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if !(ratio >= SINGULAR_RATIO) {
        return Err(Error::SingularHessian { ratio });
    }
    if let Some(ch) = h.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    h.clone().lu().solve(b).ok_or(Error::SingularHessian { ratio })
}

/// `J H⁻¹ Jᵀ M` for an explicit (already damped) Hessian.
pub fn gls_from_hessian(h: &DMatrix<f64>, j: &DMatrix<f64>, loss: LossKind, n: usize) -> Result<DMatrix<f64>> {
    if h.nrows() != j.ncols() {
        return Err(Error::DimensionMismatch(format!("Hessian is {}x{}, J has {} columns", h.nrows(), h.ncols(), j.ncols())));
    }
    let z = dense_solve(h, &j.transpose())?;
    Ok(j * z * label_coupling(loss, j.nrows(), n))
}

pub fn gls_dense(
    model: &DiffModel,
    loss: LossKind,
    data: &Dataset,
    targets: &[usize],
    mask: &LayerMask,
    space: Space,
    cfg: &CgConfig,
) -> Result<Vec<GlsMatrix>> {
    check_space(loss, space)?;
    check_targets(targets, data.n())?;
    let layers = mask.layers(model)?;
    let h = dense_hessian(model, loss, data, mask, cfg)?;
    let js: Vec<DMatrix<f64>> = targets
        .iter()
        .map(|&i| model.jacobian_restricted(&data.x_row(i), Some(&layers)))
        .collect::<Result<_>>()?;
    if js.is_empty() {
        return Ok(Vec::new());
    }
    let m = model.m();
    let rhs = DMatrix::from_fn(h.nrows(), m * js.len(), |r, c| js[c / m][(c % m, r)]);
    let z = dense_solve(&h, &rhs)?;
    targets
        .iter()
        .zip(&js)
        .enumerate()
        .map(|(t, (&i, j))| {
            let zi = z.columns(t * m, m).into_owned();
            Ok(GlsMatrix::new(i, assemble(model, loss, data, i, j, &zi, space)?, space))
        })
        .collect()
}
