use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::lira::{lira_scores, score_sample, ObservationScale};
use super::metrics::{permutation_pvalue, spearman, tpr_at_fpr, tradeoff_from_scores};
use super::shadows::{train_shadows, ModelTemplate, MIN_SHADOWS};
use crate::dataset::Dataset;
use crate::diff_models::{Architecture, LossKind, TrainConfig};
use crate::error::{Error, Result};
use crate::gls_engine::{gls_compute, scalarize, CgConfig, LayerMask, Scalarization, Space};
use crate::linear_gaussian::AlphaGrid;
use crate::mc_sim::EmpiricalCurve;
use crate::rng;

pub const REPORTED_FPRS: [f64; 2] = [0.05, 0.01];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub template: ModelTemplate,
    pub shadows: usize,
    pub fraction: f64,
    /// Share of the data the audited model is trained on.
    pub target_fraction: f64,
    pub cg: CgConfig,
    pub mask: LayerMask,
    pub space: Space,
    pub scalar: Scalarization,
    pub scale: ObservationScale,
    pub permutations: usize,
    /// Size of the top and bottom GLS groups as a share of the members.
    pub quantile: f64,
    pub alpha_grid: AlphaGrid,
    pub seed: u64,
}

impl AuditConfig {
    pub fn new(arch: Architecture, seed: u64) -> Self {
        Self {
            template: ModelTemplate {
                arch,
                loss: LossKind::CrossEntropy,
                train: TrainConfig {
                    tolerance: 1e-6,
                    ..TrainConfig::default()
                },
            },
            shadows: 32,
            fraction: 0.5,
            target_fraction: 0.5,
            cg: CgConfig::default(),
            mask: LayerMask::Full,
            space: Space::Probability,
            scalar: Scalarization::Trace,
            scale: ObservationScale::Raw,
            permutations: 1000,
            quantile: 0.02,
            alpha_grid: AlphaGrid::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSample {
    pub index: usize,
    pub member: bool,
    /// Scalarized GLS of the audited model; members only.
    pub gls: Option<f64>,
    pub gls_trace: Option<f64>,
    pub lira_score: f64,
    pub mu_in: f64,
    pub mu_out: f64,
    pub sigma_in: f64,
    pub sigma_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub samples: Vec<AuditSample>,
    pub spearman: f64,
    pub p_value: f64,
    pub tpr_at_fpr: BTreeMap<String, f64>,
    /// Mean over members of `σ_out/σ_in`.
    pub sigma_ratio_mean: f64,
    /// Mean over members of `|μ_out − μ_in|`.
    pub mu_gap_mean: f64,
    pub shadows_used: usize,
    pub shadows_dropped: usize,
    pub gls_failures: usize,
    pub target_grad_norm: Option<f64>,
    pub top_indices: Vec<usize>,
    pub bottom_indices: Vec<usize>,
    pub curve_top: EmpiricalCurve,
    pub curve_bottom: EmpiricalCurve,
}

/// Leave-one-shadow-out attack pooled over every shadow acting in turn as
/// the attacked model, restricted to the samples in `group`.
fn group_curve(ens: &super::ShadowEnsemble, group: &[usize], scale: ObservationScale, alpha: &[f64]) -> Result<EmpiricalCurve> {
    let mut member = Vec::new();
    let mut nonmember = Vec::new();
    for s in 0..ens.k() {
        for &i in group {
            let (ins, outs) = ens.observations(i, scale, Some(s));
            match score_sample(scale.apply(ens.losses[s][i]), &ins, &outs) {
                Ok(sc) if ens.membership[s][i] => member.push(sc.lira_score),
                Ok(sc) => nonmember.push(sc.lira_score),
                Err(Error::DegenerateFit { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    tradeoff_from_scores(&member, &nonmember, alpha)
}

/// Train the audited model on a random share of `data`, compute its GLS on
/// its members, attack it with a shadow ensemble, and correlate.
pub fn run_audit(data: &Dataset, cfg: &AuditConfig) -> Result<AuditReport> {
    if cfg.shadows < MIN_SHADOWS {
        return Err(Error::TooFewShadows {
            survived: cfg.shadows,
            required: MIN_SHADOWS,
        });
    }
    let n = data.n();
    let n_target = (cfg.target_fraction * n as f64).round() as usize;
    if n_target < 3 || n_target >= n {
        return Err(Error::InvalidArgument(format!("target fraction {} invalid for n = {n}", cfg.target_fraction)));
    }
    cfg.template.loss.check_targets(data.y())?;
    let mut r = rng::stream(cfg.seed, "mia_audit.target", 0);
    let mut members: Vec<usize> = sample(&mut r, n, n_target).into_vec();
    members.sort_unstable();
    let train_set = data.subset(&members);
    let target = cfg
        .template
        .train_on(&train_set, rng::derive_seed(cfg.seed, "mia_audit.target_init"))?;

    let positions: Vec<usize> = (0..members.len()).collect();
    let gls = gls_compute(&target, cfg.template.loss, &train_set, &positions, &cfg.cg, &cfg.mask, cfg.space)?;
    let mut gls_value = vec![None; n];
    let mut gls_trace = vec![None; n];
    let mut failures = 0;
    for (pos, g) in gls.into_iter().enumerate() {
        match g {
            Ok(g) => {
                gls_value[members[pos]] = Some(scalarize(&g, cfg.scalar));
                gls_trace[members[pos]] = Some(g.trace);
            }
            Err(e) => {
                log::warn!("GLS failed for sample {}: {e}", members[pos]);
                failures += 1;
            }
        }
    }

    let ens = train_shadows(
        data,
        &cfg.template,
        cfg.shadows,
        cfg.fraction,
        rng::derive_seed(cfg.seed, "mia_audit.shadows"),
    )?;
    let losses = target.sample_losses(cfg.template.loss, data)?;
    let scores = lira_scores(&ens, &losses, cfg.scale)?;
    let is_member = {
        let mut v = vec![false; n];
        for &i in &members {
            v[i] = true;
        }
        v
    };

    let scored: Vec<(usize, f64)> = members.iter().filter_map(|&i| gls_value[i].map(|g| (i, g))).collect();
    let a: Vec<f64> = scored.iter().map(|(_, g)| *g).collect();
    let b: Vec<f64> = scored.iter().map(|(i, _)| scores[*i].lira_score).collect();
    let rho = spearman(&a, &b)?;
    let p_value = permutation_pvalue(&a, &b, cfg.permutations, rng::derive_seed(cfg.seed, "mia_audit.permutation"))?;

    let member_scores: Vec<f64> = (0..n).filter(|i| is_member[*i]).map(|i| scores[i].lira_score).collect();
    let nonmember_scores: Vec<f64> = (0..n).filter(|i| !is_member[*i]).map(|i| scores[i].lira_score).collect();
    let mut tpr = BTreeMap::new();
    for f in REPORTED_FPRS {
        tpr.insert(f.to_string(), tpr_at_fpr(&member_scores, &nonmember_scores, f)?);
    }

    let mut ranked = scored.clone();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let group = ((cfg.quantile * ranked.len() as f64).round() as usize).max(1);
    let top: Vec<usize> = ranked.iter().take(group).map(|(i, _)| *i).collect();
    let bottom: Vec<usize> = ranked.iter().rev().take(group).map(|(i, _)| *i).collect();
    let alpha = cfg.alpha_grid.points();

    let mean = |f: &dyn Fn(usize) -> f64| members.iter().map(|&i| f(i)).sum::<f64>() / members.len() as f64;
    let samples = (0..n)
        .map(|i| AuditSample {
            index: i,
            member: is_member[i],
            gls: gls_value[i],
            gls_trace: gls_trace[i],
            lira_score: scores[i].lira_score,
            mu_in: scores[i].mu_in,
            mu_out: scores[i].mu_out,
            sigma_in: scores[i].sigma_in,
            sigma_out: scores[i].sigma_out,
        })
        .collect();
    Ok(AuditReport {
        samples,
        spearman: rho,
        p_value,
        tpr_at_fpr: tpr,
        sigma_ratio_mean: mean(&|i| scores[i].sigma_out / scores[i].sigma_in),
        mu_gap_mean: mean(&|i| (scores[i].mu_out - scores[i].mu_in).abs()),
        shadows_used: ens.k(),
        shadows_dropped: ens.dropped,
        gls_failures: failures,
        target_grad_norm: target.meta.grad_norm,
        curve_top: group_curve(&ens, &top, cfg.scale, &alpha)?,
        curve_bottom: group_curve(&ens, &bottom, cfg.scale, &alpha)?,
        top_indices: top,
        bottom_indices: bottom,
    })
}
