use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::model::{Architecture, DiffModel};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

const LBFGS_MEMORY: usize = 10;
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub max_epochs: usize,
    pub tolerance: f64,
    /// `None` takes the architecture default.
    pub l2: Option<f64>,
    pub seed: u64,
    /// Initial step for gradient descent.
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Lbfgs,
            max_epochs: 2000,
            tolerance: 1e-8,
            l2: None,
            seed: 0,
            learning_rate: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("training tolerance must be positive".into()));
        }
        if self.l2.is_some_and(|l| !(l >= 0.0)) {
            return Err(Error::InvalidArgument("l2 must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best iterate by gradient norm.
    pub model: DiffModel,
    pub converged: bool,
    pub epochs: usize,
    pub log: Vec<TrainLogEntry>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full-batch minimization of the regularized mean loss, starting from the
/// model's current parameters. Never fails on non-convergence; see [`train`].
pub fn train_report(model: &DiffModel, loss: LossKind, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let l2 = cfg.l2.unwrap_or_else(|| model.arch().default_l2());
    let eval = |theta: &[f64]| -> Result<(f64, Vec<f64>)> { model.with_theta(theta.to_vec())?.gradient(loss, data, l2) };

    let mut x = model.theta().to_vec();
    let (mut f, mut g) = eval(&x)?;
    let mut gn = norm(&g);
    let mut best = (gn, x.clone());
    let mut log = vec![TrainLogEntry {
        epoch: 0,
        loss: f,
        grad_norm: gn,
    }];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut epochs = 0;
    let mut step0 = cfg.learning_rate;

    while gn > cfg.tolerance && epochs < cfg.max_epochs {
        epochs += 1;
        let mut dir: Vec<f64> = match cfg.optimizer {
            Optimizer::GradientDescent => g.iter().map(|v| -v).collect(),
            Optimizer::Lbfgs => two_loop(&g, &memory),
        };
        if dot(&g, &dir) >= 0.0 {
            memory.clear();
            dir = g.iter().map(|v| -v).collect();
        }
        let mut t = match cfg.optimizer {
            Optimizer::GradientDescent => step0,
            Optimizer::Lbfgs if memory.is_empty() => (1.0 / gn).min(1.0),
            Optimizer::Lbfgs => 1.0,
        };
        let slope = dot(&g, &dir);
        // Below this, differences in f are rounding noise.
        let slack = 4.0 * f64::EPSILON * f.abs().max(1e-300);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let (fnew, gnew) = eval(&xn)?;
            let decrease = fnew <= f + ARMIJO_C * t * slope;
            let flat = (fnew - f).abs() <= slack && norm(&gnew) < gn;
            if fnew.is_finite() && (decrease || flat) {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if memory.is_empty() {
                break;
            }
            memory.clear();
            continue;
        };
        if cfg.optimizer == Optimizer::GradientDescent {
            step0 = (2.0 * t).min(1e6);
        }
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-16 * norm(&s) * norm(&yv) && sy > 0.0 {
            if memory.len() == LBFGS_MEMORY {
                memory.pop_front();
            }
            memory.push_back((s, yv, 1.0 / sy));
        }
        x = xn;
        f = fnew;
        g = gnew;
        gn = norm(&g);
        if gn < best.0 {
            best = (gn, x.clone());
        }
        log.push(TrainLogEntry {
            epoch: epochs,
            loss: f,
            grad_norm: gn,
        });
    }

    let mut out = model.with_theta(best.1)?;
    out.meta.loss = Some(loss);
    out.meta.l2 = l2;
    out.meta.grad_norm = Some(best.0);
    out.meta.tolerance = Some(cfg.tolerance);
    Ok(TrainOutcome {
        converged: best.0 <= cfg.tolerance,
        model: out,
        epochs,
        log,
    })
}

fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Like [`train_report`] but returns `NonConvergence` when the tolerance is
/// not reached.
pub fn train(model: &DiffModel, loss: LossKind, data: &Dataset, cfg: &TrainConfig) -> Result<DiffModel> {
    let out = train_report(model, loss, data, cfg)?;
    if out.converged {
        Ok(out.model)
    } else {
        Err(Error::NonConvergence {
            what: "training",
            iterations: out.epochs,
            achieved: out.model.meta.grad_norm.unwrap_or(f64::NAN),
        })
    }
}

/// Initializes `arch` from `cfg.seed` and trains it.
pub fn fit(arch: Architecture, loss: LossKind, data: &Dataset, cfg: &TrainConfig) -> Result<DiffModel> {
    train(&DiffModel::init(arch, cfg.seed)?, loss, data, cfg)
}
