use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::mc_sim::{empirical_tradeoff, EmpiricalCurve};
use crate::rng;

pub const MIN_PERMUTATIONS: usize = 1000;

/// Trade-off curve of the test "member iff score > t".
pub fn tradeoff_from_scores(member: &[f64], nonmember: &[f64], alpha_grid: &[f64]) -> Result<EmpiricalCurve> {
    let neg = |v: &[f64]| v.iter().map(|s| -s).collect::<Vec<_>>();
    empirical_tradeoff(&neg(member), &neg(nonmember), alpha_grid)
}

/// `1 − β` at `α = fpr`.
pub fn tpr_at_fpr(member: &[f64], nonmember: &[f64], fpr: f64) -> Result<f64> {
    Ok(1.0 - tradeoff_from_scores(member, nonmember, &[fpr])?.beta[0])
}

/// Ranks starting at 1; ties share their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut ranks = vec![0.0; v.len()];
    let mut k = 0;
    while k < order.len() {
        let mut e = k;
        while e + 1 < order.len() && v[order[e + 1]] == v[order[k]] {
            e += 1;
        }
        let r = (k + e) as f64 / 2.0 + 1.0;
        for &i in &order[k..=e] {
            ranks[i] = r;
        }
        k = e + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::InvalidArgument("rank correlation needs at least 3 pairs".into()));
    }
    Ok(())
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Two-sided permutation p-value `(1 + #{|ρ_perm| >= |ρ_obs|}) / (n_perm + 1)`.
pub fn permutation_pvalue(a: &[f64], b: &[f64], n_perm: usize, seed: u64) -> Result<f64> {
    if n_perm < MIN_PERMUTATIONS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_PERMUTATIONS} permutations")));
    }
    check_pair(a, b)?;
    let ra = average_ranks(a);
    let mut rb = average_ranks(b);
    let observed = pearson(&ra, &rb)?.abs();
    let mut r = rng::stream(seed, "mia_audit.permutation", 0);
    let mut hits = 0usize;
    for _ in 0..n_perm {
        rb.shuffle(&mut r);
        if pearson(&ra, &rb)?.abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (n_perm + 1) as f64)
}
