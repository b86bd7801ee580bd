use nalgebra::{DMatrix, DVector, SVD};

use crate::dataset::{Dataset, RCOND_FLOOR};
use crate::error::{Error, Result};

/// Largest `d` for which `(XᵀX)⁻¹` is materialized.
pub const XTX_INVERSE_LIMIT: usize = 2000;

/// An OLS fit of `Y` on the fixed design `X`.
///
/// Internally keeps the thin SVD `X = U Σ Vᵀ`; leverages are the squared row
/// norms of `U` and `Θ̂ = V Σ⁻¹ Uᵀ Y`.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub theta_hat: DMatrix<f64>,
    pub leverage: DVector<f64>,
    pub residuals: DMatrix<f64>,
    u: DMatrix<f64>,
    singular_values: DVector<f64>,
    v: DMatrix<f64>,
}

pub fn fit_ols(data: &Dataset) -> Result<LinearFit> {
    let x = data.x();
    let (n, d) = (data.n(), data.d());
    if n < d || d == 0 {
        return Err(Error::InvalidArgument(format!("OLS needs n >= d >= 1, got n = {n}, d = {d}")));
    }
    let svd = SVD::new(x.clone(), true, true);
    let sv = svd.singular_values.clone();
    let max = sv.max();
    let min = sv.min();
    let rcond = if max > 0.0 { (min / max).powi(2) } else { 0.0 };
    if !(rcond >= RCOND_FLOOR) {
        return Err(Error::RankDeficient { condition: 1.0 / rcond });
    }
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();

    let leverage = DVector::from_fn(n, |i, _| u.row(i).norm_squared());
    let uty = u.transpose() * data.y();
    let mut scaled = uty;
    for (k, s) in sv.iter().enumerate() {
        scaled.row_mut(k).scale_mut(1.0 / s);
    }
    let theta_hat = &v * scaled;
    let residuals = data.y() - x * &theta_hat;
    Ok(LinearFit {
        theta_hat,
        leverage,
        residuals,
        u,
        singular_values: sv,
        v,
    })
}

impl LinearFit {
    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn d(&self) -> usize {
        self.u.ncols()
    }

    /// Row `i` of the hat matrix, `h_{i·}`.
    pub fn hat_row(&self, i: usize) -> DVector<f64> {
        let ui = self.u.row(i).transpose();
        &self.u * ui
    }

    /// The dense hat matrix `U Uᵀ`.
    pub fn hat_matrix(&self) -> DMatrix<f64> {
        &self.u * self.u.transpose()
    }

    /// `‖r_i‖²` for every sample.
    pub fn residual_norms2(&self) -> Vec<f64> {
        (0..self.residuals.nrows())
            .map(|i| self.residuals.row(i).norm_squared())
            .collect()
    }

    /// `(XᵀX)⁻¹ = V Σ⁻² Vᵀ`, materialized on demand.
    pub fn xtx_inverse(&self) -> Result<DMatrix<f64>> {
        let d = self.d();
        if d > XTX_INVERSE_LIMIT {
            return Err(Error::FeasibilityGuard {
                size: d,
                limit: XTX_INVERSE_LIMIT,
            });
        }
        let mut vs = self.v.clone();
        for (k, s) in self.singular_values.iter().enumerate() {
            vs.column_mut(k).scale_mut(1.0 / (s * s));
        }
        Ok(vs * self.v.transpose())
    }

    /// Estimated condition number of `XᵀX`.
    pub fn condition(&self) -> f64 {
        (self.singular_values.max() / self.singular_values.min()).powi(2)
    }
}

/// Finite-difference sensitivity of the fitted value `ŷ_i` to the observed `y_i`.
///
/// Each coordinate of `y_i` is perturbed by `epsilon` and the model refitted;
/// column `c` of the result is the difference quotient of `ŷ_i` for coordinate `c`.
/// The OLS fit is linear in `Y`, so the result equals `h_ii I_m` up to roundoff.
pub fn self_influence_identity_check(
    fit: &LinearFit,
    data: &Dataset,
    i: usize,
    epsilon: f64,
) -> Result<DMatrix<f64>> {
    if i >= data.n() {
        return Err(Error::InvalidArgument(format!("sample index {i} out of range for n = {}", data.n())));
    }
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in [1e-7, 1e-3], got {epsilon}")));
    }
    let m = data.m();
    let xi = data.x().row(i).into_owned();
    let base = &xi * &fit.theta_hat;
    let mut out = DMatrix::zeros(m, m);
    for c in 0..m {
        let mut y = data.y().clone();
        y[(i, c)] += epsilon;
        let refit = fit_ols(&data.with_y(y)?)?;
        let shifted = &xi * &refit.theta_hat;
        for r in 0..m {
            out[(r, c)] = (shifted[(0, r)] - base[(0, r)]) / epsilon;
        }
    }
    Ok(out)
}
