//! Closed forms: weighted (Pregibon) leverage for binary logistic regression
//! and the last-linear-layer formulas for quadratic and cross-entropy losses.
//! `ridge` is the total diagonal added to the mean-loss Hessian (training
//! `l2` plus damping), so these agree with the CG and dense paths.

use nalgebra::DMatrix;

use super::dense::dense_solve;
use super::{check_targets, GlsMatrix, Space};
use crate::dataset::{gram_rcond, RCOND_FLOOR};
use crate::diff_models::{softmax_jacobian, Architecture, DiffModel};
use crate::error::{Error, Result};

pub const LAST_LAYER_CE_LIMIT: usize = 4000;

fn augment(features: &DMatrix<f64>) -> DMatrix<f64> {
    features.clone().insert_column(features.ncols(), 1.0)
}

fn quad_form(inv_b: &DMatrix<f64>, g: &DMatrix<f64>, i: usize) -> f64 {
    (g.row(i) * inv_b.column(i)).to_scalar()
}

/// `w_i x̃_iᵀ (X̃ᵀWX̃ + nρI)⁻¹ x̃_i` for the listed targets.
pub fn pregibon_leverage(features: &DMatrix<f64>, weights: &[f64], ridge: f64, targets: &[usize]) -> Result<Vec<f64>> {
    let n = features.nrows();
    if weights.len() != n {
        return Err(Error::DimensionMismatch(format!("{} weights for {n} rows", weights.len())));
    }
    check_targets(targets, n)?;
    let g = augment(features);
    let wg = DMatrix::from_fn(n, g.ncols(), |r, c| weights[r] * g[(r, c)]);
    let gram = g.transpose() * wg + DMatrix::identity(g.ncols(), g.ncols()) * (n as f64 * ridge);
    let ch = gram.cholesky().ok_or(Error::SingularWeightedGram)?;
    let sel = DMatrix::from_fn(g.ncols(), targets.len(), |r, c| g[(targets[c], r)]);
    let sol = ch.solve(&sel);
    Ok(targets
        .iter()
        .enumerate()
        .map(|(c, &i)| weights[i] * (g.row(i) * sol.column(c)).to_scalar())
        .collect())
}

/// `∂p̂_i/∂y_i` for a single-logit logistic model, every sample.
pub fn binary_logistic_gls(model: &DiffModel, features: &DMatrix<f64>, ridge: f64) -> Result<Vec<f64>> {
    if !matches!(model.arch(), Architecture::Logistic { m: 1, .. }) {
        return Err(Error::InvalidArgument("binary closed form needs a single-logit logistic model".into()));
    }
    let weights: Vec<f64> = (0..features.nrows())
        .map(|i| {
            let p = model.probabilities(&features.row(i).iter().copied().collect::<Vec<_>>())?[0];
            Ok(p * (1.0 - p))
        })
        .collect::<Result<_>>()?;
    let all: Vec<usize> = (0..features.nrows()).collect();
    pregibon_leverage(features, &weights, ridge, &all)
}

/// `g̃_iᵀ (G̃ᵀG̃ + (n/2)ρI)⁻¹ g̃_i`; the GLS matrix is this times `I_m`.
pub fn gls_last_layer_quadratic(features: &DMatrix<f64>, targets: &[usize], ridge: f64) -> Result<Vec<f64>> {
    let n = features.nrows();
    check_targets(targets, n)?;
    let g = augment(features);
    if ridge == 0.0 {
        let rcond = gram_rcond(&g);
        if !(rcond >= RCOND_FLOOR) {
            return Err(Error::RankDeficient { condition: 1.0 / rcond });
        }
    }
    let gram = g.transpose() * &g + DMatrix::identity(g.ncols(), g.ncols()) * (0.5 * n as f64 * ridge);
    let ch = gram.cholesky().ok_or(Error::RankDeficient { condition: f64::INFINITY })?;
    let sol = ch.solve(&g.transpose());
    Ok(targets.iter().map(|&i| quad_form(&sol, &g, i)).collect())
}

/// Last-layer cross-entropy GLS with Hessian blocks
/// `H_[k,l] = (1/n)Σ_j (S_j)_{kl} g̃_j g̃_jᵀ + ρ δ_{kl} I`.
pub fn gls_last_layer_crossentropy(
    features: &DMatrix<f64>,
    probs: &DMatrix<f64>,
    targets: &[usize],
    ridge: f64,
    space: Space,
) -> Result<Vec<GlsMatrix>> {
    let n = features.nrows();
    if probs.nrows() != n {
        return Err(Error::DimensionMismatch(format!("{} probability rows for {n} samples", probs.nrows())));
    }
    check_targets(targets, n)?;
    let m = probs.ncols();
    let g = augment(features);
    let dd = g.ncols();
    let size = m * dd;
    if size > LAST_LAYER_CE_LIMIT {
        return Err(Error::FeasibilityGuard { size, limit: LAST_LAYER_CE_LIMIT });
    }
    let s: Vec<DMatrix<f64>> = (0..n)
        .map(|j| softmax_jacobian(&probs.row(j).iter().copied().collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let nf = n as f64;
    let mut h = DMatrix::identity(size, size) * ridge;
    for (j, sj) in s.iter().enumerate() {
        let outer = g.row(j).transpose() * g.row(j);
        for k in 0..m {
            for l in 0..m {
                let w = sj[(k, l)] / nf;
                if w != 0.0 {
                    let mut blk = h.view_mut((k * dd, l * dd), (dd, dd));
                    blk += &outer * w;
                }
            }
        }
    }
    let jt_all = DMatrix::from_fn(size, m * targets.len(), |r, c| {
        let (t, u) = (c / m, c % m);
        if r / dd == u {
            g[(targets[t], r % dd)]
        } else {
            0.0
        }
    });
    let z = dense_solve(&h, &jt_all)?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(t, &i)| {
            let gi = g.row(i);
            let logit = DMatrix::from_fn(m, m, |u, v| {
                let col = z.column(t * m + v);
                (gi * col.rows(u * dd, dd)).to_scalar() / nf
            });
            let matrix = match space {
                Space::Logit => logit,
                Space::Probability => &s[i] * logit,
            };
            GlsMatrix::new(i, matrix, space)
        })
        .collect())
}
