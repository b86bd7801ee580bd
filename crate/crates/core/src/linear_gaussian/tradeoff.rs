use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::chi2::{chi2_quantile, chi2_sf};
use super::law::DEGENERATE_MARGIN;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Theoretical,
    Empirical,
}

/// Type-I error `alpha` (non-member flagged as member) against type-II error
/// `beta` (member missed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub h: f64,
    pub m: u32,
    pub kind: CurveKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    Log,
}

/// `lo:hi:count:spacing`, e.g. `0.0001:0.9999:400:log`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub spacing: Spacing,
}

impl Default for AlphaGrid {
    fn default() -> Self {
        Self {
            lo: 1e-4,
            hi: 1.0 - 1e-4,
            count: 400,
            spacing: Spacing::Log,
        }
    }
}

impl AlphaGrid {
    pub fn new(lo: f64, hi: f64, count: usize, spacing: Spacing) -> Result<Self> {
        if !(lo > 0.0 && hi < 1.0 && lo <= hi) || count == 0 || (count > 1 && lo == hi) {
            return Err(Error::InvalidArgument(format!(
                "alpha grid needs 0 < lo < hi < 1 and count >= 1, got {lo}:{hi}:{count}"
            )));
        }
        Ok(Self { lo, hi, count, spacing })
    }

    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let last = (self.count - 1) as f64;
        let mut pts: Vec<f64> = (0..self.count)
            .map(|k| {
                let t = k as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.lo + t * (self.hi - self.lo),
                    Spacing::Log => (self.lo.ln() + t * (self.hi.ln() - self.lo.ln())).exp(),
                }
            })
            .collect();
        // pin the endpoints exactly
        pts[0] = self.lo;
        pts[self.count - 1] = self.hi;
        pts
    }
}

impl FromStr for AlphaGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 4 {
            return Err(Error::InvalidArgument(format!("alpha grid must be lo:hi:count:log|lin, got {s:?}")));
        }
        let num = |p: &str| -> Result<f64> {
            p.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number {p:?} in alpha grid")))
        };
        let count = parts[2]
            .parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("bad count {:?} in alpha grid", parts[2])))?;
        let spacing = match parts[3] {
            "log" => Spacing::Log,
            "lin" | "linear" => Spacing::Linear,
            other => return Err(Error::InvalidArgument(format!("unknown spacing {other:?}"))),
        };
        Self::new(num(parts[0])?, num(parts[1])?, count, spacing)
    }
}

impl fmt::Display for AlphaGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sp = match self.spacing {
            Spacing::Log => "log",
            Spacing::Linear => "lin",
        };
        write!(f, "{}:{}:{}:{}", self.lo, self.hi, self.count, sp)
    }
}

pub(crate) fn check_alpha_grid(alpha: &[f64]) -> Result<()> {
    if alpha.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::InvalidArgument("alpha values must lie in (0, 1)".into()));
    }
    if alpha.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("alpha grid must be sorted ascending".into()));
    }
    Ok(())
}

/// `β(α) = 1 − F_m( (1+h)/(1−h) · F_m⁻¹(α) )` for the optimal test at leverage `h`.
pub fn theoretical_tradeoff(h: f64, m: u32, alpha_grid: &[f64]) -> Result<TradeoffCurve> {
    check_alpha_grid(alpha_grid)?;
    if !(0.0..=1.0).contains(&h) {
        return Err(Error::InvalidArgument(format!("leverage must lie in [0, 1], got {h}")));
    }
    if h >= 1.0 - DEGENERATE_MARGIN {
        return Err(Error::DegenerateLaw { h });
    }
    let beta = if h == 0.0 {
        alpha_grid.iter().map(|a| 1.0 - a).collect()
    } else {
        let ratio = (1.0 + h) / (1.0 - h);
        alpha_grid
            .iter()
            .map(|&a| chi2_sf(ratio * chi2_quantile(a, m)?, m))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(TradeoffCurve {
        alpha: alpha_grid.to_vec(),
        beta,
        h,
        m,
        kind: CurveKind::Theoretical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid() {
        let g = AlphaGrid::default();
        let p = g.points();
        assert_eq!(p.len(), 400);
        assert_eq!(p[0], 1e-4);
        assert_eq!(p[399], 1.0 - 1e-4);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        assert_eq!("0.0001:0.9999:400:log".parse::<AlphaGrid>().unwrap(), g);
        assert!("0:1:3:log".parse::<AlphaGrid>().is_err());
        assert!("0.1:0.2:3:cubic".parse::<AlphaGrid>().is_err());
        assert_eq!(g.to_string().parse::<AlphaGrid>().unwrap(), g);
    }

    #[test]
    fn zero_leverage_is_the_diagonal() {
        let alpha = AlphaGrid::default().points();
        let c = theoretical_tradeoff(0.0, 3, &alpha).unwrap();
        for (a, b) in c.alpha.iter().zip(&c.beta) {
            assert_eq!(*b, 1.0 - a);
        }
    }

    #[test]
    fn tiny_alpha_gives_beta_near_one() {
        let c = theoretical_tradeoff(0.9, 10, &[1e-12]).unwrap();
        assert!(c.beta[0] > 0.99, "{}", c.beta[0]);
        let c = theoretical_tradeoff(0.5, 1, &[1e-12]).unwrap();
        assert!(c.beta[0] > 1.0 - 1e-5);
    }

    #[test]
    fn curve_is_monotone_and_ordered_in_leverage() {
        let alpha = AlphaGrid::default().points();
        for m in [1, 2, 10] {
            let curves: Vec<_> = [0.0, 0.1, 0.5, 0.9]
                .iter()
                .map(|h| theoretical_tradeoff(*h, m, &alpha).unwrap())
                .collect();
            for c in &curves {
                assert!(c.beta.windows(2).all(|w| w[1] <= w[0] + 1e-15));
                assert!(c.beta.iter().all(|b| (0.0..=1.0).contains(b)));
            }
            for pair in curves.windows(2) {
                for (lo, hi) in pair[0].beta.iter().zip(&pair[1].beta) {
                    assert!(hi <= lo, "leverage ordering violated");
                }
            }
        }
    }

    #[test]
    fn rejects_unsorted_or_out_of_range() {
        assert!(theoretical_tradeoff(0.3, 1, &[0.5, 0.2]).is_err());
        assert!(theoretical_tradeoff(0.3, 1, &[0.0]).is_err());
        assert!(theoretical_tradeoff(1.0, 1, &[0.5]).is_err());
    }
}
