//! Chi-square distribution through the regularized incomplete gamma function.

use crate::error::{Error, Result};

const MAX_ITER: usize = 2000;
const EPS: f64 = f64::EPSILON;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `a > 0`.
pub fn ln_gamma(a: f64) -> f64 {
    if a < 0.5 {
        // Reflection keeps the Lanczos sum in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * a).sin()).ln() - ln_gamma(1.0 - a);
    }
    let z = a - 1.0;
    let mut sum = LANCZOS[0];
    for (k, c) in LANCZOS.iter().enumerate().skip(1) {
        sum += c / (z + k as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + sum.ln()
}

/// `(P(a, x), Q(a, x))`, the regularized lower and upper incomplete gamma
/// functions. Series for `x < a + 1`, Lentz continued fraction otherwise; the
/// branch that is computed directly is accurate to relative precision and the
/// other is its complement.
pub fn gamma_pq(a: f64, x: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) || !(x >= 0.0) {
        return Err(Error::InvalidArgument(format!("incomplete gamma needs a > 0, x >= 0; got a = {a}, x = {x}")));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    if x.is_infinite() {
        return Ok((1.0, 0.0));
    }
    let ln_prefactor = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        let p = lower_series(a, x, ln_prefactor)?;
        Ok((p, 1.0 - p))
    } else {
        let q = upper_continued_fraction(a, x, ln_prefactor)?;
        Ok((1.0 - q, q))
    }
}

fn lower_series(a: f64, x: f64, ln_prefactor: f64) -> Result<f64> {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            return Ok((ln_prefactor + sum.ln()).exp().min(1.0));
        }
    }
    Err(Error::NonConvergence {
        what: "incomplete gamma series",
        iterations: MAX_ITER,
        achieved: term / sum,
    })
}

fn upper_continued_fraction(a: f64, x: f64, ln_prefactor: f64) -> Result<f64> {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            return Ok((ln_prefactor + h.ln()).exp().min(1.0));
        }
    }
    Err(Error::NonConvergence {
        what: "incomplete gamma continued fraction",
        iterations: MAX_ITER,
        achieved: f64::NAN,
    })
}

fn check_df(m: u32) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("chi-square degrees of freedom must be positive".into()));
    }
    Ok(f64::from(m) / 2.0)
}

/// `P(X <= x)` for `X ~ χ²(m)`.
pub fn chi2_cdf(x: f64, m: u32) -> Result<f64> {
    let a = check_df(m)?;
    if x.is_nan() {
        return Err(Error::InvalidArgument("chi2_cdf of NaN".into()));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    Ok(gamma_pq(a, x / 2.0)?.0)
}

/// Survival function `P(X > x)`, accurate in the upper tail.
pub fn chi2_sf(x: f64, m: u32) -> Result<f64> {
    let a = check_df(m)?;
    if x.is_nan() {
        return Err(Error::InvalidArgument("chi2_sf of NaN".into()));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    Ok(gamma_pq(a, x / 2.0)?.1)
}

/// Log-density of `χ²(m)` at `x > 0`.
pub fn chi2_ln_pdf(x: f64, m: u32) -> Result<f64> {
    let a = check_df(m)?;
    Ok((a - 1.0) * x.ln() - x / 2.0 - a * std::f64::consts::LN_2 - ln_gamma(a))
}

/// Inverse of [`chi2_cdf`] for `p` in `(0, 1)`.
///
/// Newton iterations on `ln P` (lower half) or `ln Q` (upper half), kept inside a
/// shrinking bracket; any step leaving the bracket is replaced by bisection.
pub fn chi2_quantile(p: f64, m: u32) -> Result<f64> {
    let a = check_df(m)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("chi2_quantile needs p in (0, 1), got {p}")));
    }
    let upper = p > 0.5;
    let target = if upper { (1.0 - p).ln() } else { p.ln() };

    // h(x) = ln P(x) - ln p  (or ln q - ln Q(x)); increasing in x.
    let eval = |x: f64| -> Result<(f64, f64)> {
        let (pp, qq) = gamma_pq(a, x / 2.0)?;
        let ln_pdf = chi2_ln_pdf(x, m)?;
        if upper {
            let h = target - qq.ln();
            // dh/dx = pdf / Q
            Ok((h, (ln_pdf - qq.ln()).exp()))
        } else {
            let h = pp.ln() - target;
            Ok((h, (ln_pdf - pp.ln()).exp()))
        }
    };

    let mut x = initial_guess(p, a, f64::from(m));
    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let (h, dh) = eval(x)?;
        if h == 0.0 {
            return Ok(x);
        }
        if h < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if h.abs() <= 4.0 * EPS {
            return Ok(x);
        }
        let mut next = if h.is_finite() && dh.is_finite() && dh > 0.0 {
            x - h / dh
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = if hi.is_infinite() {
                2.0 * x.max(1.0)
            } else if lo > 0.0 && hi / lo > 4.0 {
                (lo * hi).sqrt()
            } else {
                0.5 * (lo + hi)
            };
        }
        if hi.is_finite() && (hi - lo) <= 2.0 * EPS * hi {
            return Ok(next);
        }
        if (next - x).abs() <= EPS * x {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NonConvergence {
        what: "chi-square quantile",
        iterations: MAX_ITER,
        achieved: hi - lo,
    })
}

fn initial_guess(p: f64, a: f64, m: f64) -> f64 {
    // Lower-tail power law P ≈ (x/2)^a / Γ(a+1) for small p.
    let small = 2.0 * ((p.ln() + ln_gamma(a + 1.0)) / a).exp();
    let z = normal_quantile_approx(p);
    let c = 2.0 / (9.0 * m);
    let wh = m * (1.0 - c + z * c.sqrt()).powi(3);
    if wh > 0.0 && (p > 0.05 || wh > small) {
        wh
    } else {
        small.max(f64::MIN_POSITIVE)
    }
}

/// Acklam's rational approximation (relative error ~1e-9); only a starting point.
fn normal_quantile_approx(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let lo = 0.024_25;
    if p < lo {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - lo {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// erf by its Maclaurin series; independent of the incomplete gamma code.
    fn erf_series(z: f64) -> f64 {
        let mut term = z;
        let mut sum = z;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -z * z / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880.0_f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(25.5) - 56.389_167_643_719_9).abs() < 1e-11);
    }

    #[test]
    fn cdf_at_zero() {
        for m in 1..20 {
            assert_eq!(chi2_cdf(0.0, m).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_df_median_closed_form() {
        let v = chi2_cdf(2.0 * std::f64::consts::LN_2, 2).unwrap();
        assert!((v - 0.5).abs() < 1e-15, "{v}");
    }

    #[test]
    fn one_df_matches_erf_oracle() {
        // F_1(x) = 2 Φ(√x) − 1 = erf(√(x/2))
        for x in [0.5, 1.0, 4.0] {
            let expect = erf_series((x / 2.0_f64).sqrt());
            let got = chi2_cdf(x, 1).unwrap();
            assert!((got - expect).abs() < 1e-14, "x={x}: {got} vs {expect}");
        }
    }

    #[test]
    fn quantile_inverts_cdf_in_probability() {
        for m in [1, 2, 3, 10, 50] {
            for p in [1e-10, 1e-4, 0.05, 0.3, 0.5, 0.7, 0.95, 1.0 - 1e-4] {
                let x = chi2_quantile(p, m).unwrap();
                let back = chi2_cdf(x, m).unwrap();
                assert!((back - p).abs() <= 1e-12, "m={m} p={p}: {back}");
            }
        }
    }

    #[test]
    fn quantile_rejects_closed_endpoints() {
        assert!(chi2_quantile(0.0, 3).is_err());
        assert!(chi2_quantile(1.0, 3).is_err());
        assert!(chi2_cdf(1.0, 0).is_err());
    }

    #[test]
    fn sf_is_accurate_far_in_the_tail() {
        // Q(1/2, 50) = erfc(√50); log10 ≈ -23.3
        let q = chi2_sf(100.0, 1).unwrap();
        assert!(q > 1e-24 && q < 1e-22, "{q}");
    }
}
