//! Per-sample membership-inference vulnerability through leverage scores.
//!
//! The crate is organized bottom-up:
//!
//! - [`linear_gaussian`]: fixed-design Gaussian linear model theory (OLS fit,
//!   leverage, residual laws, optimal attack statistic, analytic trade-off curves,
//!   chi-square special functions).
//! - [`mc_sim`]: Monte-Carlo simulation of the linear model and empirical trade-off
//!   curves.
//! - [`diff_models`]: small differentiable models with exact Jacobians,
//!   gradients and Hessian-vector products.
//! - [`gls_engine`]: generalized leverage scores through implicit
//!   differentiation, matrix-free (conjugate gradient) and dense.
//! - [`mia_audit`]: shadow-model likelihood-ratio attacks and rank correlation
//!   against leverage scores.

pub mod dataset;
pub mod diff_models;
pub mod error;
pub mod gls_engine;
pub mod linear_gaussian;
pub mod mc_sim;
pub mod mia_audit;
pub mod rng;

pub use nalgebra;

pub use dataset::Dataset;
pub use diff_models::{Activation, Architecture, DiffModel, LossKind, Optimizer, TrainConfig};
pub use error::{Error, Result};
pub use gls_engine::{CgConfig, GlsMatrix, LayerMask, Scalarization, Space};
pub use linear_gaussian::{
    chi2_cdf, chi2_quantile, chi2_sf, fit_ols, optimal_mia_statistic, residual_law,
    theoretical_tradeoff, AlphaGrid, GenerativeConfig, Hypothesis, LinearFit, ResidualLaw,
    TradeoffCurve,
};
pub use mc_sim::{EmpiricalCurve, SimConfig};
