use std::collections::BTreeMap;
use std::path::Path;

use levaudit_core::diff_models::{load_checkpoint, train_report, write_checkpoint, write_train_log, DiffModel};
use levaudit_core::gls_engine::{gls_compute, gls_dense, scalarize};
use levaudit_core::mc_sim::{simulate_cell, single_leverage_design};
use levaudit_core::mia_audit::{planted_outliers, run_audit, AuditReport};
use levaudit_core::nalgebra::DMatrix;
use levaudit_core::rng::derive_seed;
use levaudit_core::{
    fit_ols, optimal_mia_statistic, theoretical_tradeoff, Dataset, Error, GenerativeConfig, LossKind, GlsMatrix, SimConfig,
};
use serde::Serialize;

use crate::config::{
    AuditCommandConfig, AuditData, CommandConfig, Format, GlsConfig, LeverageConfig, RunConfig, SimDesign,
    SimulateConfig, TrainCommandConfig, CONFIG_FILE,
};
use crate::error::{CliError, EXIT_CG_STRICT};
use crate::output::{num, opt, OutDir};

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::load(path).map_err(|e| CliError::loading(&format!("dataset {}", path.display()), e))
}

fn load_model(path: &Path) -> Result<DiffModel, CliError> {
    load_checkpoint(path).map_err(|e| CliError::loading(&format!("checkpoint {}", path.display()), e))
}

/// Runs `cfg`, writing its outputs and the config snapshot into a fresh `out`.
/// The returned error, if any, is raised after the outputs are written.
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    OutDir::refuse_existing(out)?;
    let (dir, deferred) = match &cfg.command {
        CommandConfig::Leverage(c) => leverage(c, cfg.format, out)?,
        CommandConfig::Simulate(c) => simulate(c, cfg.seed, cfg.format, out)?,
        CommandConfig::Gls(c) => gls(c, cfg.format, out)?,
        CommandConfig::Train(c) => train(c, out)?,
        CommandConfig::Audit(c) => audit(c, cfg.format, out)?,
    };
    dir.text(CONFIG_FILE, &cfg.to_json())?;
    match deferred {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

type Deferred = Option<CliError>;

#[derive(Serialize)]
struct LeverageSample {
    index: usize,
    leverage: f64,
    residual_norm2: f64,
    /// `None` where the member law is degenerate (`h ≈ 1`).
    statistic: Option<f64>,
}

#[derive(Serialize)]
struct LeverageReport {
    n: usize,
    d: usize,
    m: usize,
    sigma2: f64,
    condition: f64,
    samples: Vec<LeverageSample>,
}

#[derive(Serialize)]
struct SampleCurve {
    index: usize,
    h: f64,
    beta: Vec<f64>,
}

#[derive(Serialize)]
struct CurveSet {
    alpha: Vec<f64>,
    curves: Vec<SampleCurve>,
}

fn leverage(cfg: &LeverageConfig, format: Format, out: &Path) -> Result<(OutDir, Deferred), CliError> {
    let data = load_dataset(&cfg.input)?;
    let data = if cfg.intercept {
        data.with_intercept().map_err(|e| CliError::loading("intercept column", e))?
    } else {
        data
    };
    let fit = fit_ols(&data).map_err(|e| CliError::core("leverage", e))?;
    let norms = fit.residual_norms2();
    let m = data.m() as u32;
    let alpha = cfg.alpha_grid.points();
    let mut samples = Vec::with_capacity(data.n());
    let mut curves = Vec::new();
    for (i, &r2) in norms.iter().enumerate() {
        let h = fit.leverage[i];
        let statistic = match optimal_mia_statistic(r2, h, cfg.sigma2, m) {
            Ok(s) => Some(s),
            Err(Error::DegenerateLaw { .. }) => None,
            Err(e) => return Err(CliError::core("optimal statistic", e)),
        };
        match theoretical_tradeoff(h, m, &alpha) {
            Ok(c) => curves.push(SampleCurve { index: i, h, beta: c.beta }),
            Err(Error::DegenerateLaw { .. }) => {}
            Err(e) => return Err(CliError::core("trade-off curve", e)),
        }
        samples.push(LeverageSample {
            index: i,
            leverage: h,
            residual_norm2: r2,
            statistic,
        });
    }
    let dir = OutDir::create(out)?;
    match format {
        Format::Json => {
            dir.json(
                "leverage.json",
                &LeverageReport {
                    n: data.n(),
                    d: data.d(),
                    m: data.m(),
                    sigma2: cfg.sigma2,
                    condition: fit.condition(),
                    samples,
                },
            )?;
            dir.json("curves.json", &CurveSet { alpha, curves })?;
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = samples
                .iter()
                .map(|s| vec![s.index.to_string(), num(s.leverage), num(s.residual_norm2), opt(s.statistic)])
                .collect();
            dir.csv("leverage.csv", &["index", "leverage", "residual_norm2", "statistic"], &rows)?;
            let mut rows = Vec::new();
            for c in &curves {
                for (a, b) in alpha.iter().zip(&c.beta) {
                    rows.push(vec![c.index.to_string(), num(c.h), num(*a), num(*b)]);
                }
            }
            dir.csv("curves.csv", &["index", "h", "alpha", "beta"], &rows)?;
        }
    }
    Ok((dir, None))
}

#[derive(Serialize)]
struct SimCell {
    h: f64,
    m: u32,
    trials: usize,
    sup_deviation: f64,
    alpha: Vec<f64>,
    theory: Vec<f64>,
    empirical: Vec<f64>,
    /// Running minimum of `empirical`, for plotting only.
    empirical_isotonic: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    member_norms: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nonmember_norms: Option<Vec<f64>>,
}

fn simulate(cfg: &SimulateConfig, seed: u64, format: Format, out: &Path) -> Result<(OutDir, Deferred), CliError> {
    let designs: Vec<(DMatrix<f64>, usize)> = match &cfg.design {
        SimDesign::SingleLeverage { h, n } => h
            .iter()
            .map(|&h| single_leverage_design(h, *n).map(|x| (x, 0)))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::core("simulate", e))?,
        SimDesign::File { path, target_index } => vec![(load_dataset(path)?.x().clone(), *target_index)],
    };
    let alpha = cfg.alpha_grid.points();
    let mut cells = Vec::new();
    for (design, target_index) in &designs {
        for &m in &cfg.m {
            let k = cells.len();
            let d = design.ncols();
            let cell_seed = derive_seed(seed, &format!("simulate.cell.{k}"));
            let gen = GenerativeConfig::new(vec![vec![1.0; m as usize]; d], cfg.sigma2, cell_seed)
                .map_err(|e| CliError::core("simulate", e))?;
            let sim = SimConfig {
                design: design.clone(),
                gen,
                trials: cfg.trials,
                target_index: *target_index,
                seed: cell_seed,
            };
            let (res, pairs) = simulate_cell(&sim, &alpha).map_err(|e| CliError::core("simulate", e))?;
            let iso = res.empirical.isotonic();
            cells.push(SimCell {
                h: res.h,
                m,
                trials: res.trials,
                sup_deviation: res.sup_deviation,
                alpha: alpha.clone(),
                theory: res.theory.beta,
                empirical: res.empirical.beta,
                empirical_isotonic: iso.beta,
                member_norms: cfg.emit_norms.then_some(pairs.member_norms),
                nonmember_norms: cfg.emit_norms.then_some(pairs.nonmember_norms),
            });
        }
    }
    let dir = OutDir::create(out)?;
    match format {
        Format::Json => dir.json("simulate.json", &BTreeMap::from([("cells", &cells)]))?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = cells
                .iter()
                .map(|c| vec![num(c.h), c.m.to_string(), c.trials.to_string(), num(c.sup_deviation)])
                .collect();
            dir.csv("cells.csv", &["h", "m", "trials", "sup_deviation"], &rows)?;
            let mut rows = Vec::new();
            for c in &cells {
                for k in 0..c.alpha.len() {
                    rows.push(vec![
                        num(c.h),
                        c.m.to_string(),
                        num(c.alpha[k]),
                        num(c.theory[k]),
                        num(c.empirical[k]),
                        num(c.empirical_isotonic[k]),
                    ]);
                }
            }
            dir.csv("curves.csv", &["h", "m", "alpha", "theory", "empirical", "empirical_isotonic"], &rows)?;
            if cfg.emit_norms {
                let mut rows = Vec::new();
                for c in &cells {
                    let (mem, non) = (c.member_norms.as_deref().unwrap_or(&[]), c.nonmember_norms.as_deref().unwrap_or(&[]));
                    for (t, (a, b)) in mem.iter().zip(non).enumerate() {
                        rows.push(vec![num(c.h), c.m.to_string(), t.to_string(), num(*a), num(*b)]);
                    }
                }
                dir.csv("norms.csv", &["h", "m", "trial", "member", "nonmember"], &rows)?;
            }
        }
    }
    Ok((dir, None))
}

#[derive(Serialize)]
struct GlsRecord {
    index: usize,
    space: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    matrix: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    frobenius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spectral: Option<f64>,
    scalar: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cg_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cg_residual: Option<f64>,
    lambda: f64,
    mask: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct OracleReport {
    targets: usize,
    compared: usize,
    max_discrepancy: f64,
}

fn max_discrepancy(cg: &[Result<GlsMatrix, Error>], dense: &[GlsMatrix]) -> (usize, f64) {
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    for (a, b) in cg.iter().zip(dense) {
        if let Ok(a) = a {
            compared += 1;
            worst = worst.max((&a.matrix - &b.matrix).amax());
        }
    }
    (compared, worst)
}

fn gls(cfg: &GlsConfig, format: Format, out: &Path) -> Result<(OutDir, Deferred), CliError> {
    let data = load_dataset(&cfg.input)?;
    let model = load_model(&cfg.checkpoint)?;
    cfg.loss.check_targets(data.y()).map_err(|e| CliError::loading("targets", e))?;
    let targets: Vec<usize> = cfg.targets.clone().unwrap_or_else(|| (0..data.n()).collect());
    let results = gls_compute(&model, cfg.loss, &data, &targets, &cfg.cg, &cfg.mask, cfg.space)
        .map_err(|e| CliError::core("gls", e))?;
    let oracle = if cfg.oracle_dense {
        let dense = gls_dense(&model, cfg.loss, &data, &targets, &cfg.mask, cfg.space, &cfg.cg)
            .map_err(|e| CliError::core("dense oracle", e))?;
        let (compared, max_discrepancy) = max_discrepancy(&results, &dense);
        Some(OracleReport {
            targets: targets.len(),
            compared,
            max_discrepancy,
        })
    } else {
        None
    };

    let mut cg_failures = 0;
    let records: Vec<GlsRecord> = targets
        .iter()
        .zip(&results)
        .map(|(&index, r)| {
            let mut rec = GlsRecord {
                index,
                space: cfg.space.to_string(),
                matrix: None,
                trace: None,
                frobenius: None,
                spectral: None,
                scalar: cfg.scalar.to_string(),
                value: None,
                cg_iters: None,
                cg_residual: None,
                lambda: cfg.cg.damping,
                mask: cfg.mask.to_string(),
                error: None,
            };
            match r {
                Ok(g) => {
                    rec.matrix = Some(g.row_major());
                    rec.trace = Some(g.trace);
                    rec.frobenius = Some(g.frobenius);
                    rec.spectral = Some(g.spectral);
                    rec.value = Some(scalarize(g, cfg.scalar));
                    rec.cg_iters = Some(g.cg_iters);
                    rec.cg_residual = Some(g.cg_residual);
                }
                Err(e) => {
                    if matches!(e, Error::CgNonConvergence { .. }) {
                        cg_failures += 1;
                    }
                    rec.error = Some(e.to_string());
                }
            }
            rec
        })
        .collect();

    let dir = OutDir::create(out)?;
    match format {
        Format::Json => dir.json_lines("gls.jsonl", &records)?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = records
                .iter()
                .map(|r| {
                    vec![
                        r.index.to_string(),
                        r.space.clone(),
                        opt(r.trace),
                        opt(r.frobenius),
                        opt(r.spectral),
                        r.scalar.clone(),
                        opt(r.value),
                        r.cg_iters.map(|k| k.to_string()).unwrap_or_default(),
                        opt(r.cg_residual),
                        num(r.lambda),
                        r.mask.clone(),
                        r.error.clone().unwrap_or_default(),
                    ]
                })
                .collect();
            dir.csv(
                "gls.csv",
                &[
                    "index", "space", "trace", "frobenius", "spectral", "scalar", "value", "cg_iters", "cg_residual",
                    "lambda", "mask", "error",
                ],
                &rows,
            )?;
        }
    }
    if let Some(o) = &oracle {
        dir.json("oracle.json", o)?;
    }
    if cfg.strict && cg_failures > 0 {
        return Ok((dir, Some(CliError::new(
            EXIT_CG_STRICT,
            format!("gls: conjugate gradient did not converge for {cg_failures} target(s) under --strict"),
        ))));
    }
    Ok((dir, None))
}

#[derive(Serialize)]
struct TrainSummary {
    converged: bool,
    epochs: usize,
    loss: LossKind,
    objective: f64,
    grad_norm: Option<f64>,
    l2: f64,
    p: usize,
}

fn train(cfg: &TrainCommandConfig, out: &Path) -> Result<(OutDir, Deferred), CliError> {
    let data = load_dataset(&cfg.input)?;
    cfg.loss.check_targets(data.y()).map_err(|e| CliError::loading("targets", e))?;
    if cfg.arch.input_dim() != data.d() || cfg.arch.output_dim() != data.m() {
        return Err(CliError::usage(format!(
            "model {:?} does not fit data with d = {}, m = {}",
            cfg.arch,
            data.d(),
            data.m()
        )));
    }
    let init = DiffModel::init(cfg.arch.clone(), cfg.train.seed).map_err(|e| CliError::core("train", e))?;
    let outcome = train_report(&init, cfg.loss, &data, &cfg.train).map_err(|e| CliError::core("train", e))?;
    if !outcome.converged {
        log::warn!(
            "training stopped after {} epochs at gradient norm {:e}; the checkpoint holds the best iterate",
            outcome.epochs,
            outcome.model.meta.grad_norm.unwrap_or(f64::NAN)
        );
    }
    let objective = outcome
        .model
        .objective(cfg.loss, &data, outcome.model.meta.l2)
        .map_err(|e| CliError::core("train", e))?;
    let mut ckpt = Vec::new();
    write_checkpoint(&outcome.model, &mut ckpt).map_err(|e| CliError::core("checkpoint", e))?;
    let mut log = Vec::new();
    write_train_log(&outcome.log, &mut log).map_err(|e| CliError::core("train log", e))?;
    let dir = OutDir::create(out)?;
    dir.bytes("model.ckpt", &ckpt)?;
    dir.bytes("train_log.jsonl", &log)?;
    dir.json(
        "train.json",
        &TrainSummary {
            converged: outcome.converged,
            epochs: outcome.epochs,
            loss: cfg.loss,
            objective,
            grad_norm: outcome.model.meta.grad_norm,
            l2: outcome.model.meta.l2,
            p: outcome.model.p(),
        },
    )?;
    Ok((dir, None))
}

fn audit(cfg: &AuditCommandConfig, format: Format, out: &Path) -> Result<(OutDir, Deferred), CliError> {
    let data = match &cfg.data {
        AuditData::File { path } => load_dataset(path)?,
        AuditData::PlantedOutliers(p) => planted_outliers(p).map_err(|e| CliError::core("synthetic data", e))?.data,
    };
    let report = run_audit(&data, &cfg.audit).map_err(|e| CliError::core("audit", e))?;
    let dir = OutDir::create(out)?;
    match format {
        Format::Json => dir.json("audit.json", &report)?,
        Format::Csv => write_audit_csv(&dir, &report)?,
    }
    Ok((dir, None))
}

fn write_audit_csv(dir: &OutDir, r: &AuditReport) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = r
        .samples
        .iter()
        .map(|s| {
            vec![
                s.index.to_string(),
                s.member.to_string(),
                opt(s.gls),
                opt(s.gls_trace),
                num(s.lira_score),
                num(s.mu_in),
                num(s.mu_out),
                num(s.sigma_in),
                num(s.sigma_out),
            ]
        })
        .collect();
    dir.csv(
        "samples.csv",
        &["index", "member", "gls", "gls_trace", "lira_score", "mu_in", "mu_out", "sigma_in", "sigma_out"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = (0..r.curve_top.alpha.len())
        .map(|k| vec![num(r.curve_top.alpha[k]), num(r.curve_top.beta[k]), num(r.curve_bottom.beta[k])])
        .collect();
    dir.csv("curves.csv", &["alpha", "beta_top", "beta_bottom"], &rows)?;
    let mut rows = vec![
        vec!["spearman".to_string(), num(r.spearman)],
        vec!["p_value".to_string(), num(r.p_value)],
        vec!["sigma_ratio_mean".to_string(), num(r.sigma_ratio_mean)],
        vec!["mu_gap_mean".to_string(), num(r.mu_gap_mean)],
        vec!["shadows_used".to_string(), r.shadows_used.to_string()],
        vec!["shadows_dropped".to_string(), r.shadows_dropped.to_string()],
        vec!["gls_failures".to_string(), r.gls_failures.to_string()],
        vec!["target_grad_norm".to_string(), opt(r.target_grad_norm)],
    ];
    for (fpr, tpr) in &r.tpr_at_fpr {
        rows.push(vec![format!("tpr_at_fpr_{fpr}"), num(*tpr)]);
    }
    dir.csv("summary.csv", &["key", "value"], &rows)
}
