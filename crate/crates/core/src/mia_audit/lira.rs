use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::shadows::ShadowEnsemble;
use crate::error::{Error, Result};

pub const SIGMA_FLOOR: f64 = 1e-6;
pub const MIN_SIDE: usize = 3;

/// Transform applied to a raw loss before Gaussian fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObservationScale {
    #[default]
    Raw,
    /// `ln(ℓ + 1e-300)`.
    Log,
    /// `ln(p/(1 − p))` with `p = exp(−ℓ)`, the logit of the true-class
    /// probability for a cross-entropy loss.
    Logit,
}

impl ObservationScale {
    pub fn apply(self, loss: f64) -> f64 {
        match self {
            ObservationScale::Raw => loss,
            ObservationScale::Log => (loss + 1e-300).ln(),
            ObservationScale::Logit => {
                let l = loss.max(1e-300);
                // ln p − ln(1 − p) with p = e^{−l}
                -l - (-(-l).exp_m1()).ln()
            }
        }
    }
}

impl FromStr for ObservationScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "log" => Ok(Self::Log),
            "logit" => Ok(Self::Logit),
            _ => Err(Error::InvalidArgument(format!("unknown observation scale {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianFit {
    /// Mean and population standard deviation, floored at [`SIGMA_FLOOR`].
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.len() < MIN_SIDE {
            return Err(Error::DegenerateFit { count: values.len() });
        }
        let n = values.len() as f64;
        let mu = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mu,
            sigma: var.sqrt().max(SIGMA_FLOOR),
        })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * (2.0 * PI).ln()
    }
}

/// `log N(obs; in) − log N(obs; out)`.
pub fn likelihood_ratio(obs: f64, fit_in: &GaussianFit, fit_out: &GaussianFit) -> f64 {
    fit_in.ln_pdf(obs) - fit_out.ln_pdf(obs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub mu_in: f64,
    pub mu_out: f64,
    pub sigma_in: f64,
    pub sigma_out: f64,
    pub lira_score: f64,
}

/// Scores one observation against in/out observation sets.
pub fn score_sample(obs: f64, ins: &[f64], outs: &[f64]) -> Result<SampleScore> {
    let fi = GaussianFit::fit(ins)?;
    let fo = GaussianFit::fit(outs)?;
    Ok(SampleScore {
        mu_in: fi.mu,
        mu_out: fo.mu,
        sigma_in: fi.sigma,
        sigma_out: fo.sigma,
        lira_score: likelihood_ratio(obs, &fi, &fo),
    })
}

/// Per-sample attack scores of a target model given its per-sample losses.
pub fn lira_scores(ensemble: &ShadowEnsemble, target_losses: &[f64], scale: ObservationScale) -> Result<Vec<SampleScore>> {
    lira_scores_excluding(ensemble, target_losses, scale, None)
}

/// As [`lira_scores`], leaving shadow `skip` out of the fits.
pub fn lira_scores_excluding(
    ensemble: &ShadowEnsemble,
    target_losses: &[f64],
    scale: ObservationScale,
    skip: Option<usize>,
) -> Result<Vec<SampleScore>> {
    let n = ensemble.n();
    if target_losses.len() != n {
        return Err(Error::DimensionMismatch(format!("{} target losses for {n} samples", target_losses.len())));
    }
    (0..n)
        .map(|i| {
            let (ins, outs) = ensemble.observations(i, scale, skip);
            let s = score_sample(scale.apply(target_losses[i]), &ins, &outs)?;
            if !s.lira_score.is_finite() {
                return Err(Error::DegenerateFit { count: ins.len().min(outs.len()) });
            }
            Ok(s)
        })
        .collect()
}
