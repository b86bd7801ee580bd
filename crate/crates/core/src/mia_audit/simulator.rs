//! Likelihood-ratio attack on the linear-Gaussian simulator, next to the
//! optimal statistic computed with the generative noise variance.

use serde::{Deserialize, Serialize};

use super::lira::{likelihood_ratio, GaussianFit, ObservationScale};
use crate::error::Result;
use crate::linear_gaussian::optimal_mia_statistic;
use crate::mc_sim::{simulate_residual_pairs, SimConfig};
use crate::rng::derive_seed;

/// Scores where larger means "member".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorAttack {
    pub h: f64,
    pub member_lira: Vec<f64>,
    pub nonmember_lira: Vec<f64>,
    pub member_optimal: Vec<f64>,
    pub nonmember_optimal: Vec<f64>,
}

/// Fits the in/out Gaussians on `shadow_trials` independent trials, then
/// scores `cfg.trials` fresh member and non-member observations.
pub fn simulator_attack(cfg: &SimConfig, shadow_trials: usize, scale: ObservationScale) -> Result<SimulatorAttack> {
    let shadow_cfg = SimConfig {
        trials: shadow_trials,
        seed: derive_seed(cfg.seed, "mia_audit.simulator_shadows"),
        ..cfg.clone()
    };
    let shadow = simulate_residual_pairs(&shadow_cfg)?;
    let tx = |v: &[f64]| v.iter().map(|x| scale.apply(*x)).collect::<Vec<_>>();
    let fit_in = GaussianFit::fit(&tx(&shadow.member_norms))?;
    let fit_out = GaussianFit::fit(&tx(&shadow.nonmember_norms))?;
    let eval = simulate_residual_pairs(cfg)?;
    let m = cfg.gen.m() as u32;
    let sigma2 = cfg.gen.sigma2;
    let lira = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| likelihood_ratio(scale.apply(*x), &fit_in, &fit_out)).collect() };
    let optimal = |v: &[f64]| -> Result<Vec<f64>> { v.iter().map(|x| optimal_mia_statistic(*x, eval.h, sigma2, m)).collect() };
    Ok(SimulatorAttack {
        h: eval.h,
        member_lira: lira(&eval.member_norms),
        nonmember_lira: lira(&eval.nonmember_norms),
        member_optimal: optimal(&eval.member_norms)?,
        nonmember_optimal: optimal(&eval.nonmember_norms)?,
    })
}
