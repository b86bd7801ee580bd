//! Fixed-design Gaussian linear model: OLS, leverage scores, residual laws,
//! the optimal membership statistic and its analytic error trade-off curve.

mod chi2;
mod law;
mod ols;
mod tradeoff;

pub use chi2::{chi2_cdf, chi2_ln_pdf, chi2_quantile, chi2_sf, gamma_pq, ln_gamma};
pub use law::{optimal_mia_statistic, residual_law, GenerativeConfig, Hypothesis, ResidualLaw, DEGENERATE_MARGIN};
pub use ols::{fit_ols, self_influence_identity_check, LinearFit, XTX_INVERSE_LIMIT};
pub use tradeoff::{theoretical_tradeoff, AlphaGrid, CurveKind, Spacing, TradeoffCurve};

pub(crate) use tradeoff::check_alpha_grid;
