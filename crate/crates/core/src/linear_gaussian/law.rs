use serde::{Deserialize, Serialize};

use super::chi2::chi2_cdf;
use crate::error::{Error, Result};

/// Leverages at or above `1 - DEGENERATE_MARGIN` are treated as exact interpolation.
pub const DEGENERATE_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Member,
    NonMember,
}

/// Parameters of the fixed-design Gaussian generative model `Y = XΘ* + E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeConfig {
    /// `d × m`, row-major.
    pub theta_star: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub seed: u64,
}

impl GenerativeConfig {
    pub fn new(theta_star: Vec<Vec<f64>>, sigma2: f64, seed: u64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma2 must be positive, got {sigma2}")));
        }
        let m = theta_star.first().map_or(0, Vec::len);
        if m == 0 || theta_star.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch("theta_star must be a non-empty d×m matrix".into()));
        }
        Ok(Self {
            theta_star,
            sigma2,
            seed,
        })
    }

    pub fn d(&self) -> usize {
        self.theta_star.len()
    }

    pub fn m(&self) -> usize {
        self.theta_star[0].len()
    }
}

/// Law of the residual `r_i` under one hypothesis: `N(0, variance_scale · I_m)`,
/// so that `‖r_i‖² ~ variance_scale · χ²(m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualLaw {
    pub hypothesis: Hypothesis,
    pub variance_scale: f64,
    pub df: u32,
}

fn check_leverage(h: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&h) {
        return Err(Error::InvalidArgument(format!("leverage must lie in [0, 1], got {h}")));
    }
    Ok(())
}

pub fn residual_law(h: f64, sigma2: f64, m: u32, hypothesis: Hypothesis) -> Result<ResidualLaw> {
    check_leverage(h)?;
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma2 must be positive, got {sigma2}")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("output dimension must be positive".into()));
    }
    let variance_scale = match hypothesis {
        Hypothesis::Member => {
            if h >= 1.0 - DEGENERATE_MARGIN {
                return Err(Error::DegenerateLaw { h });
            }
            sigma2 * (1.0 - h)
        }
        Hypothesis::NonMember => sigma2 * (1.0 + h),
    };
    Ok(ResidualLaw {
        hypothesis,
        variance_scale,
        df: m,
    })
}

impl ResidualLaw {
    /// `P(‖r‖² <= t)`.
    pub fn norm2_cdf(&self, t: f64) -> Result<f64> {
        chi2_cdf(t / self.variance_scale, self.df)
    }

    pub fn norm2_mean(&self) -> f64 {
        self.variance_scale * f64::from(self.df)
    }

    pub fn norm2_variance(&self) -> f64 {
        2.0 * f64::from(self.df) * self.variance_scale * self.variance_scale
    }
}

/// Log-likelihood ratio of member vs non-member for a residual with squared
/// norm `r_norm2` at leverage `h`:
///
/// `S = (m/2) ln((1+h)/(1-h)) − h ‖r‖² / (σ² (1 − h²))`.
///
/// Larger values favour membership.
pub fn optimal_mia_statistic(r_norm2: f64, h: f64, sigma2: f64, m: u32) -> Result<f64> {
    check_leverage(h)?;
    if !(r_norm2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("squared residual norm must be non-negative, got {r_norm2}")));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma2 must be positive, got {sigma2}")));
    }
    if h >= 1.0 - DEGENERATE_MARGIN {
        return Err(Error::DegenerateLaw { h });
    }
    let log_ratio = h.ln_1p() - (-h).ln_1p();
    let slope = h / (sigma2 * (1.0 - h * h));
    Ok(0.5 * f64::from(m) * log_ratio - slope * r_norm2)
}
