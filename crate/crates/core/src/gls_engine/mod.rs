//! Generalized leverage scores `∂f(x_i)/∂y_i` of a trained model through
//! implicit differentiation of the optimality condition:
//! `GLS_i = J_i (H + λI)⁻¹ J_iᵀ M_i` with `M_i = −(1/n) ∂²ℓ/∂y∂f`.

mod cg;
mod closed;
mod dense;
mod scalar;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::diff_models::{softmax_jacobian, Curvature, DiffModel, LossKind};
use crate::error::{Error, Result};

pub use cg::{cg_solve_operator, CgSolution, Damped, DenseOperator, LinearOperator};
pub use closed::{
    binary_logistic_gls, gls_last_layer_crossentropy, gls_last_layer_quadratic, pregibon_leverage,
    LAST_LAYER_CE_LIMIT,
};
pub use dense::{dense_hessian, gls_dense, gls_from_hessian, DENSE_LIMIT, SINGULAR_RATIO};
pub use scalar::{frobenius, scalarize_matrix, spectral, trace, Scalarization, POWER_MAX_ITERS, POWER_TOL};

/// Factor by which the stored training gradient norm may exceed the training
/// tolerance before a warning is logged.
pub const NON_OPTIMAL_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    pub damping: f64,
    pub max_iters: usize,
    /// Relative to the right-hand side norm.
    pub residual_tol: f64,
    /// Samples per Hessian accumulation batch; 0 means one batch.
    pub batch_size: usize,
    pub gauss_newton: bool,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            damping: 1e-3,
            max_iters: 100,
            residual_tol: 1e-3,
            batch_size: 0,
            gauss_newton: false,
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 || !(self.residual_tol > 0.0) || !(self.damping >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "CG needs max_iters >= 1, residual_tol > 0, damping >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    /// `∂f/∂y`.
    Logit,
    /// `∂p̂/∂y`, cross-entropy only.
    Probability,
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(Self::Logit),
            "probability" => Ok(Self::Probability),
            _ => Err(Error::InvalidArgument(format!("unknown space {s:?}"))),
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Logit => "logit",
            Self::Probability => "probability",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LayerMask {
    #[default]
    Full,
    /// The last `K` layers.
    Last(usize),
    Layers(Vec<usize>),
}

impl LayerMask {
    pub fn layers(&self, model: &DiffModel) -> Result<Vec<usize>> {
        let l = model.layer_count();
        let sel: Vec<usize> = match self {
            LayerMask::Full => (0..l).collect(),
            LayerMask::Last(k) if *k >= 1 && *k <= l => (l - k..l).collect(),
            LayerMask::Last(k) => {
                return Err(Error::InvalidArgument(format!("last:{k} invalid for a {l}-layer model")));
            }
            LayerMask::Layers(v) => {
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        model.selected_indices(Some(&sel))?;
        Ok(sel)
    }

    pub fn ranges(&self, model: &DiffModel) -> Result<Vec<std::ops::Range<usize>>> {
        let r = model.layer_ranges();
        Ok(self.layers(model)?.into_iter().map(|k| r[k].clone()).collect())
    }

    pub fn p_sub(&self, model: &DiffModel) -> Result<usize> {
        Ok(self.ranges(model)?.iter().map(|r| r.len()).sum())
    }
}

impl FromStr for LayerMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(Self::Full);
        }
        s.strip_prefix("last:")
            .and_then(|k| k.parse().ok())
            .map(Self::Last)
            .ok_or_else(|| Error::InvalidArgument(format!("layer mask must be 'full' or 'last:K', got {s:?}")))
    }
}

impl fmt::Display for LayerMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Full => f.write_str("full"),
            Self::Last(k) => write!(f, "last:{k}"),
            Self::Layers(v) => {
                let s: Vec<String> = v.iter().map(ToString::to_string).collect();
                write!(f, "layers:{}", s.join(","))
            }
        }
    }
}

/// Per-sample sensitivity matrix with cached scalar reductions.
#[derive(Debug, Clone, PartialEq)]
pub struct GlsMatrix {
    pub index: usize,
    pub matrix: DMatrix<f64>,
    pub space: Space,
    pub trace: f64,
    pub frobenius: f64,
    pub spectral: f64,
    pub cg_iters: usize,
    pub cg_residual: f64,
}

impl GlsMatrix {
    pub fn new(index: usize, matrix: DMatrix<f64>, space: Space) -> Self {
        Self {
            index,
            trace: trace(&matrix),
            frobenius: frobenius(&matrix),
            spectral: spectral(&matrix),
            matrix,
            space,
            cg_iters: 0,
            cg_residual: 0.0,
        }
    }

    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn row_major(&self) -> Vec<f64> {
        self.matrix.transpose().iter().copied().collect()
    }
}

pub fn scalarize(g: &GlsMatrix, op: Scalarization) -> f64 {
    match op {
        Scalarization::Trace => g.trace,
        Scalarization::Frobenius => g.frobenius,
        Scalarization::Spectral => g.spectral,
    }
}

/// `M_i = −(1/n) ∂²ℓ/∂y∂f`, evaluated per sample.
pub fn label_coupling(loss: LossKind, m: usize, n: usize) -> DMatrix<f64> {
    loss.mixed_second_derivative(m) * (-1.0 / n as f64)
}

/// Masked, damped Hessian of the training objective as an operator on `θ_sub`.
pub struct HessianOperator<'a> {
    model: &'a DiffModel,
    loss: LossKind,
    data: &'a Dataset,
    idx: Vec<usize>,
    curvature: Curvature,
    l2: f64,
    damping: f64,
    /// Layers below the selection are frozen, so products run on the
    /// sub-network from the lowest selected layer over its cached inputs.
    tail: Option<Tail>,
}

struct Tail {
    model: DiffModel,
    data: Dataset,
    shift: usize,
    curvature: Curvature,
}

impl<'a> HessianOperator<'a> {
    pub fn new(model: &'a DiffModel, loss: LossKind, data: &'a Dataset, mask: &LayerMask, cfg: &CgConfig) -> Result<Self> {
        let layers = mask.layers(model)?;
        let lo = layers[0];
        let curvature = Curvature {
            layers: Some(layers.clone()),
            batch_size: cfg.batch_size,
            gauss_newton: cfg.gauss_newton,
        };
        let tail = if lo > 0 {
            let rows: Vec<Vec<f64>> = (0..data.n())
                .into_par_iter()
                .map(|i| model.layer_input(&data.x_row(i), lo))
                .collect::<Result<_>>()?;
            let width = rows.first().map_or(0, Vec::len);
            let x = DMatrix::from_fn(data.n(), width, |i, c| rows[i][c]);
            Some(Tail {
                model: model.tail(lo)?,
                data: Dataset::new_unchecked(x, data.y().clone())?,
                shift: model.layer_shapes()[lo].offset,
                curvature: Curvature {
                    layers: Some(layers.iter().map(|k| k - lo).collect()),
                    ..curvature.clone()
                },
            })
        } else {
            None
        };
        Ok(Self {
            model,
            loss,
            data,
            idx: model.selected_indices(Some(&layers))?,
            curvature,
            l2: model.meta.l2,
            damping: cfg.damping,
            tail,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.idx
    }

    pub fn layers(&self) -> &[usize] {
        self.curvature.layers.as_deref().unwrap_or_default()
    }
}

impl LinearOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.idx.len()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let (model, data, curvature, shift) = match &self.tail {
            Some(t) => (&t.model, &t.data, &t.curvature, t.shift),
            None => (self.model, self.data, &self.curvature, 0),
        };
        let mut full = vec![0.0; model.p()];
        for (k, &i) in self.idx.iter().enumerate() {
            full[i - shift] = v[k];
        }
        let hv = model.hvp_with(self.loss, data, &full, self.l2, curvature)?;
        Ok(self.idx.iter().zip(v).map(|(&i, x)| hv[i - shift] + self.damping * x).collect())
    }
}

/// `Z = (H_sub + λI)⁻¹ Jt` column by column.
pub fn cg_solve(
    model: &DiffModel,
    loss: LossKind,
    data: &Dataset,
    jt: &DMatrix<f64>,
    cfg: &CgConfig,
    mask: &LayerMask,
) -> Result<CgSolution> {
    let op = HessianOperator::new(model, loss, data, mask, cfg)?;
    cg_solve_operator(&op, jt, cfg)
}

pub(crate) fn check_space(loss: LossKind, space: Space) -> Result<()> {
    if space == Space::Probability && loss != LossKind::CrossEntropy {
        return Err(Error::InvalidArgument("probability space requires cross-entropy loss".into()));
    }
    Ok(())
}

pub(crate) fn check_targets(targets: &[usize], n: usize) -> Result<()> {
    if let Some(t) = targets.iter().find(|t| **t >= n) {
        return Err(Error::InvalidArgument(format!("target {t} out of range for n = {n}")));
    }
    Ok(())
}

/// Logit-space GLS `J Z M`, mapped to probability space when asked.
pub(crate) fn assemble(
    model: &DiffModel,
    loss: LossKind,
    data: &Dataset,
    i: usize,
    j: &DMatrix<f64>,
    z: &DMatrix<f64>,
    space: Space,
) -> Result<DMatrix<f64>> {
    let g = j * z * label_coupling(loss, model.m(), data.n());
    match space {
        Space::Logit => Ok(g),
        Space::Probability => Ok(softmax_jacobian(&model.probabilities(&data.x_row(i))?)? * g),
    }
}

fn warn_if_not_optimal(model: &DiffModel) {
    if let (Some(g), Some(t)) = (model.meta.grad_norm, model.meta.tolerance) {
        if g > NON_OPTIMAL_FACTOR * t {
            log::warn!("NonOptimalModel: stored gradient norm {g:e} exceeds {NON_OPTIMAL_FACTOR}x the training tolerance {t:e}");
        }
    }
}

/// Matrix-free GLS for each target. Errors are reported per target.
pub fn gls_compute(
    model: &DiffModel,
    loss: LossKind,
    data: &Dataset,
    targets: &[usize],
    cfg: &CgConfig,
    mask: &LayerMask,
    space: Space,
) -> Result<Vec<Result<GlsMatrix>>> {
    cfg.validate()?;
    check_space(loss, space)?;
    check_targets(targets, data.n())?;
    warn_if_not_optimal(model);
    let op = HessianOperator::new(model, loss, data, mask, cfg)?;
    let layers = op.layers().to_vec();
    Ok(targets
        .par_iter()
        .map(|&i| {
            let j = model.jacobian_restricted(&data.x_row(i), Some(&layers))?;
            let sol = cg_solve_operator(&op, &j.transpose(), cfg)?;
            let matrix = assemble(model, loss, data, i, &j, &sol.z, space)?;
            let mut g = GlsMatrix::new(i, matrix, space);
            g.cg_iters = sol.max_iterations();
            g.cg_residual = sol.max_residual();
            Ok(g)
        })
        .collect())
}

#[cfg(test)]
mod tests;
