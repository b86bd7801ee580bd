//! Monte-Carlo simulation of the fixed-design linear model.
//!
//! Each trial redraws the full noise matrix `E`, fits OLS on `XΘ* + E`, and
//! records the squared residual of the target row (member) together with the
//! squared residual of an independent fresh observation at the same design
//! point (non-member).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linear_gaussian::{chi2_cdf, fit_ols, theoretical_tradeoff, GenerativeConfig, TradeoffCurve};
use crate::rng;

const NOISE_STREAM: &str = "mc_sim.noise";

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub design: DMatrix<f64>,
    pub gen: GenerativeConfig,
    pub trials: usize,
    pub target_index: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.target_index >= self.design.nrows() {
            return Err(Error::InvalidArgument(format!(
                "target index {} out of range for n = {}",
                self.target_index,
                self.design.nrows()
            )));
        }
        if self.gen.d() != self.design.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "theta_star has {} rows, design has {} columns",
                self.gen.d(),
                self.design.ncols()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPairs {
    pub member_norms: Vec<f64>,
    pub nonmember_norms: Vec<f64>,
    /// Leverage of the target row in the simulated design.
    pub h: f64,
}

pub fn simulate_residual_pairs(cfg: &SimConfig) -> Result<ResidualPairs> {
    cfg.validate()?;
    let n = cfg.design.nrows();
    let m = cfg.gen.m();
    let i = cfg.target_index;
    let theta = DMatrix::from_fn(cfg.gen.d(), m, |r, c| cfg.gen.theta_star[r][c]);
    let mean = &cfg.design * theta;
    let fit = fit_ols(&Dataset::new(cfg.design.clone(), mean.clone())?)?;
    // x_iᵀ Θ̂ = Σ_j h_ij y_j for the refit on every trial.
    let hat_row: Vec<f64> = fit.hat_row(i).iter().copied().collect();
    let h = fit.leverage[i];
    let sigma = cfg.gen.sigma2.sqrt();

    let pairs: Vec<(f64, f64)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut g = rng::normals(cfg.seed, NOISE_STREAM, t as u64);
            let mut fitted = vec![0.0; m];
            let mut yi = vec![0.0; m];
            for j in 0..n {
                for c in 0..m {
                    let y = mean[(j, c)] + sigma * g.next();
                    fitted[c] += hat_row[j] * y;
                    if j == i {
                        yi[c] = y;
                    }
                }
            }
            let mut member = 0.0;
            let mut nonmember = 0.0;
            for c in 0..m {
                let fresh = mean[(i, c)] + sigma * g.next();
                member += (yi[c] - fitted[c]).powi(2);
                nonmember += (fresh - fitted[c]).powi(2);
            }
            (member, nonmember)
        })
        .collect();
    let (member_norms, nonmember_norms) = pairs.into_iter().unzip();
    Ok(ResidualPairs {
        member_norms,
        nonmember_norms,
        h,
    })
}

/// Empirical trade-off curve, possibly with the isotonic cleanup applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCurve {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub trials: usize,
    pub h_used: f64,
}

impl EmpiricalCurve {
    /// Running minimum of β over increasing α; for plotting output only.
    pub fn isotonic(&self) -> Self {
        let mut beta = self.beta.clone();
        for k in 1..beta.len() {
            beta[k] = beta[k].min(beta[k - 1]);
        }
        Self { beta, ..self.clone() }
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Threshold test "member iff ‖r‖² <= t". For each α, `t` is the empirical
/// α-quantile of the non-member norms and β is the fraction of member norms
/// strictly above `t`.
pub fn empirical_tradeoff(member_norms: &[f64], nonmember_norms: &[f64], alpha_grid: &[f64]) -> Result<EmpiricalCurve> {
    if member_norms.is_empty() || nonmember_norms.is_empty() {
        return Err(Error::InvalidArgument("empirical trade-off needs non-empty samples".into()));
    }
    crate::linear_gaussian::check_alpha_grid(alpha_grid)?;
    let non = sorted(nonmember_norms);
    let mem = sorted(member_norms);
    let nn = non.len() as f64;
    let beta = alpha_grid
        .iter()
        .map(|&a| {
            let k = ((a * nn).ceil() as usize).clamp(1, non.len());
            let t = non[k - 1];
            let at_or_below = mem.partition_point(|v| *v <= t);
            (mem.len() - at_or_below) as f64 / mem.len() as f64
        })
        .collect();
    Ok(EmpiricalCurve {
        alpha: alpha_grid.to_vec(),
        beta,
        trials: member_norms.len(),
        h_used: f64::NAN,
    })
}

pub fn sup_deviation(emp: &EmpiricalCurve, theory: &TradeoffCurve) -> Result<f64> {
    if emp.alpha != theory.alpha {
        return Err(Error::GridMismatch);
    }
    Ok(emp
        .beta
        .iter()
        .zip(&theory.beta)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// One-sample Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> Result<f64>) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("KS test needs samples".into()));
    }
    let s = sorted(samples);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (k, x) in s.iter().enumerate() {
        let f = cdf(*x)?;
        d = d.max((k as f64 + 1.0) / n - f).max(f - k as f64 / n);
    }
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_pvalue(d, s.len()),
    })
}

/// Asymptotic Kolmogorov distribution tail with the Stephens small-sample
/// correction.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// KS test of `norms / scale` against `χ²(m)`.
pub fn ks_test_scaled_chi2(norms: &[f64], scale: f64, m: u32) -> Result<KsResult> {
    ks_test(norms, |x| chi2_cdf(x / scale, m))
}

/// A one-column design of `n` rows whose first row has leverage exactly `h`
/// (up to roundoff): rows `1..n` equal 1 and row 0 equals `sqrt(h (n−1)/(1−h))`.
pub fn single_leverage_design(h: f64, n: usize) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&h) || n < 2 {
        return Err(Error::InvalidArgument(format!("need h in [0, 1) and n >= 2, got h = {h}, n = {n}")));
    }
    let a = (h * (n - 1) as f64 / (1.0 - h)).sqrt();
    Ok(DMatrix::from_fn(n, 1, |i, _| if i == 0 { a } else { 1.0 }))
}

/// Theory, simulation and their gap for one `(h, m)` cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub h: f64,
    pub m: u32,
    pub trials: usize,
    pub sup_deviation: f64,
    pub theory: TradeoffCurve,
    pub empirical: EmpiricalCurve,
}

pub fn simulate_cell(cfg: &SimConfig, alpha_grid: &[f64]) -> Result<(CellResult, ResidualPairs)> {
    let pairs = simulate_residual_pairs(cfg)?;
    let m = u32::try_from(cfg.gen.m()).map_err(|_| Error::InvalidArgument("m too large".into()))?;
    let theory = theoretical_tradeoff(pairs.h, m, alpha_grid)?;
    let mut empirical = empirical_tradeoff(&pairs.member_norms, &pairs.nonmember_norms, alpha_grid)?;
    empirical.h_used = pairs.h;
    let sup = sup_deviation(&empirical, &theory)?;
    Ok((
        CellResult {
            h: pairs.h,
            m,
            trials: cfg.trials,
            sup_deviation: sup,
            theory,
            empirical,
        },
        pairs,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_gaussian::AlphaGrid;

    fn cfg(design: DMatrix<f64>, m: usize, sigma2: f64, trials: usize, seed: u64) -> SimConfig {
        let d = design.ncols();
        SimConfig {
            design,
            gen: GenerativeConfig::new(vec![vec![0.7; m]; d], sigma2, 0).unwrap(),
            trials,
            target_index: 0,
            seed,
        }
    }

    #[test]
    fn noiseless_model_is_exact() {
        let c = cfg(single_leverage_design(0.5, 6).unwrap(), 2, 1e-20, 50, 1);
        let p = simulate_residual_pairs(&c).unwrap();
        assert!(p.member_norms.iter().chain(&p.nonmember_norms).all(|v| *v < 1e-15));
    }

    #[test]
    fn identity_design_interpolates() {
        let c = cfg(DMatrix::identity(3, 3), 2, 1.0, 200, 2);
        let p = simulate_residual_pairs(&c).unwrap();
        assert!((p.h - 1.0).abs() < 1e-12);
        assert!(p.member_norms.iter().all(|v| *v < 1e-20));
    }

    #[test]
    fn member_mean_matches_expectation() {
        let h = 2.0 / 3.0;
        let c = cfg(single_leverage_design(h, 5).unwrap(), 1, 1.5, 100_000, 3);
        let p = simulate_residual_pairs(&c).unwrap();
        assert!((p.h - h).abs() < 1e-12);
        let mean = p.member_norms.iter().sum::<f64>() / p.member_norms.len() as f64;
        let ratio = mean / (1.5 * 1.0);
        assert!((ratio - (1.0 - h)).abs() <= 0.02 * (1.0 - h), "{ratio}");
    }

    #[test]
    fn member_norm_variance_matches_law() {
        // Var(‖r‖²) = 2 m (σ²(1−h))²
        let h = 2.0 / 3.0;
        let c = cfg(single_leverage_design(h, 5).unwrap(), 1, 1.0, 100_000, 4);
        let p = simulate_residual_pairs(&c).unwrap();
        let n = p.member_norms.len() as f64;
        let mean = p.member_norms.iter().sum::<f64>() / n;
        let var = p.member_norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expect = 2.0 * (1.0 - h) * (1.0 - h);
        assert!((var - expect).abs() <= 0.05 * expect, "{var} vs {expect}");
    }

    #[test]
    fn deterministic_given_seed() {
        let c = cfg(single_leverage_design(0.3, 8).unwrap(), 3, 1.0, 1000, 9);
        let a = simulate_residual_pairs(&c).unwrap();
        let b = simulate_residual_pairs(&c).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| simulate_residual_pairs(&c).unwrap());
        assert_eq!(a, serial);
    }

    #[test]
    fn empirical_tradeoff_examples() {
        let alpha = AlphaGrid::new(0.01, 0.99, 99, crate::linear_gaussian::Spacing::Linear).unwrap().points();
        let same: Vec<f64> = (0..1000).map(|k| k as f64).collect();
        let c = empirical_tradeoff(&same, &same, &alpha).unwrap();
        for (a, b) in c.alpha.iter().zip(&c.beta) {
            assert!((b - (1.0 - a)).abs() <= 1e-3 + 1e-12);
        }
        let zeros = vec![0.0; 50];
        let ones = vec![1.0; 50];
        let c = empirical_tradeoff(&zeros, &ones, &alpha).unwrap();
        assert!(c.beta.iter().all(|b| *b == 0.0));
        assert!(empirical_tradeoff(&[], &ones, &alpha).is_err());
    }

    #[test]
    fn ties_are_predicted_member() {
        let c = empirical_tradeoff(&[1.0, 1.0, 2.0], &[1.0, 3.0], &[0.5]).unwrap();
        // t = 1.0, members strictly above: one of three.
        assert!((c.beta[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sup_deviation_examples() {
        let alpha = vec![0.1, 0.5, 0.9];
        let theory = theoretical_tradeoff(0.2, 1, &alpha).unwrap();
        let same = EmpiricalCurve {
            alpha: alpha.clone(),
            beta: theory.beta.clone(),
            trials: 1,
            h_used: 0.2,
        };
        assert_eq!(sup_deviation(&same, &theory).unwrap(), 0.0);
        let shifted = EmpiricalCurve {
            beta: theory.beta.iter().map(|b| b - 0.05).collect(),
            ..same.clone()
        };
        assert!((sup_deviation(&shifted, &theory).unwrap() - 0.05).abs() < 1e-12);
        let other = EmpiricalCurve {
            alpha: vec![0.1, 0.5],
            ..same
        };
        assert!(matches!(sup_deviation(&other, &theory), Err(Error::GridMismatch)));
    }

    #[test]
    fn sup_deviation_between_leverages_is_max_gap() {
        let alpha = AlphaGrid::default().points();
        let hi = theoretical_tradeoff(0.9, 1, &alpha).unwrap();
        let lo = theoretical_tradeoff(0.1, 1, &alpha).unwrap();
        let as_emp = EmpiricalCurve {
            alpha: alpha.clone(),
            beta: hi.beta.clone(),
            trials: 0,
            h_used: 0.9,
        };
        let direct = hi.beta.iter().zip(&lo.beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let got = sup_deviation(&as_emp, &lo).unwrap();
        assert!(got > 0.0);
        assert_eq!(got, direct);
    }

    #[test]
    fn isotonic_is_running_minimum() {
        let c = EmpiricalCurve {
            alpha: vec![0.1, 0.2, 0.3, 0.4],
            beta: vec![0.9, 0.95, 0.5, 0.6],
            trials: 4,
            h_used: 0.0,
        };
        assert_eq!(c.isotonic().beta, vec![0.9, 0.9, 0.5, 0.5]);
    }

    #[test]
    fn ks_accepts_correct_law_and_rejects_wrong_scale() {
        let h = 0.4;
        let c = cfg(single_leverage_design(h, 7).unwrap(), 2, 1.0, 10_000, 11);
        let p = simulate_residual_pairs(&c).unwrap();
        let ok = ks_test_scaled_chi2(&p.member_norms, 1.0 - h, 2).unwrap();
        assert!(ok.p_value > 1e-3, "{ok:?}");
        let bad = ks_test_scaled_chi2(&p.member_norms, 1.0 + h, 2).unwrap();
        assert!(bad.p_value < 1e-3, "{bad:?}");
    }

    #[test]
    fn single_leverage_design_hits_target() {
        for h in [0.0, 0.1, 0.5, 0.9] {
            let x = single_leverage_design(h, 10).unwrap();
            let fit = fit_ols(&Dataset::new(x, DMatrix::zeros(10, 1)).unwrap()).unwrap();
            assert!((fit.leverage[0] - h).abs() < 1e-12);
        }
    }
}
